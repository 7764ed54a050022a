//! Connected clusters of the picture graph.
//!
//! Two pixels are adjacent when they share a side (4-connectivity) and have
//! the same colour. All traversals use an explicit stack, run in time linear
//! in the number of pixels, and assign labels in raster discovery order.

use serde::{Deserialize, Serialize};

use crate::lattice::{BinaryImage, Color};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min_row: usize,
    pub min_col: usize,
    pub max_row: usize,
    pub max_col: usize,
}

impl BoundingBox {
    fn at(row: usize, col: usize) -> Self {
        Self {
            min_row: row,
            min_col: col,
            max_row: row,
            max_col: col,
        }
    }

    fn include(&mut self, row: usize, col: usize) {
        self.min_row = self.min_row.min(row);
        self.min_col = self.min_col.min(col);
        self.max_row = self.max_row.max(row);
        self.max_col = self.max_col.max(col);
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cluster {
    /// 1-based label in raster discovery order.
    pub id: u32,
    pub size: usize,
    /// Member pixels as `(row, col)` in raster order, when requested.
    pub pixels: Option<Vec<(usize, usize)>>,
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LabelOptions {
    /// Store the coordinates of every member pixel.
    pub keep_pixels: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterLabeling {
    pub width: usize,
    pub height: usize,
    pub color: Color,
    /// Row-major labels; 0 marks pixels of the other colour.
    pub labels: Vec<u32>,
    pub clusters: Vec<Cluster>,
}

impl ClusterLabeling {
    pub fn max_cluster_size(&self) -> usize {
        max_cluster_size(self)
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.clusters.iter().map(|c| c.size).collect()
    }

    pub fn label(&self, row: usize, col: usize) -> u32 {
        self.labels[row * self.width + col]
    }
}

/// Calls `f` on each side neighbour of pixel `idx`.
#[inline(always)]
fn for_each_neighbor(idx: usize, width: usize, len: usize, mut f: impl FnMut(usize)) {
    let col = idx % width;
    if idx >= width {
        f(idx - width);
    }
    if col > 0 {
        f(idx - 1);
    }
    if col + 1 < width {
        f(idx + 1);
    }
    if idx + width < len {
        f(idx + width);
    }
}

/// Labels the 4-connected clusters of `color`, keeping member pixels.
pub fn label_components(image: &BinaryImage, color: Color) -> ClusterLabeling {
    label_components_with(image, color, LabelOptions { keep_pixels: true })
}

pub fn label_components_with(image: &BinaryImage, color: Color, options: LabelOptions) -> ClusterLabeling {
    let (width, height) = (image.width(), image.height());
    let bits = image.bits();
    let len = bits.len();
    let target = color.bit();
    let mut labels = vec![0u32; len];
    let mut clusters: Vec<Cluster> = Vec::new();
    let mut stack: Vec<usize> = Vec::new();

    for start in 0..len {
        if bits[start] != target || labels[start] != 0 {
            continue;
        }
        let id = clusters.len() as u32 + 1;
        labels[start] = id;
        stack.push(start);
        let mut size = 0;
        let mut bbox = BoundingBox::at(start / width, start % width);
        while let Some(idx) = stack.pop() {
            size += 1;
            bbox.include(idx / width, idx % width);
            for_each_neighbor(idx, width, len, |n| {
                if bits[n] == target && labels[n] == 0 {
                    labels[n] = id;
                    stack.push(n);
                }
            });
        }
        clusters.push(Cluster {
            id,
            size,
            pixels: None,
            bbox,
        });
    }

    if options.keep_pixels {
        let mut lists: Vec<Vec<(usize, usize)>> =
            clusters.iter().map(|c| Vec::with_capacity(c.size)).collect();
        for (idx, &l) in labels.iter().enumerate() {
            if l != 0 {
                lists[l as usize - 1].push((idx / width, idx % width));
            }
        }
        for (cluster, list) in clusters.iter_mut().zip(lists) {
            cluster.pixels = Some(list);
        }
    }

    ClusterLabeling {
        width,
        height,
        color,
        labels,
        clusters,
    }
}

pub fn max_cluster_size(labeling: &ClusterLabeling) -> usize {
    labeling.clusters.iter().map(|c| c.size).max().unwrap_or(0)
}

/// Reusable buffers for repeated cluster searches on same-sized pictures.
#[derive(Debug, Default)]
pub struct ClusterScratch {
    open: Vec<u8>,
    stack: Vec<usize>,
    members: Vec<usize>,
}

impl ClusterScratch {
    pub fn new() -> Self {
        Self::default()
    }

    /// Size of the largest black cluster.
    pub fn max_black_cluster(&mut self, image: &BinaryImage) -> usize {
        self.max_cluster_in(image.bits(), image.width())
    }

    pub(crate) fn max_cluster_in(&mut self, bits: &[u8], width: usize) -> usize {
        self.open.clear();
        self.open.extend_from_slice(bits);
        self.stack.clear();
        let len = self.open.len();
        let mut best = 0;
        for start in 0..len {
            if self.open[start] == 0 {
                continue;
            }
            self.open[start] = 0;
            self.stack.push(start);
            let mut size = 0;
            while let Some(idx) = self.stack.pop() {
                size += 1;
                let open = &mut self.open;
                let stack = &mut self.stack;
                for_each_neighbor(idx, width, len, |n| {
                    if open[n] == 1 {
                        open[n] = 0;
                        stack.push(n);
                    }
                });
            }
            best = best.max(size);
        }
        best
    }

    /// Depth-first search for a black cluster of at least `n` pixels,
    /// stopping as soon as one is reached.
    ///
    /// The returned cluster holds the `n` pixels explored before stopping,
    /// which form a connected part of a black cluster of size `>= n`.
    pub fn find_cluster_at_least(&mut self, image: &BinaryImage, n: usize) -> Option<Cluster> {
        assert!(n >= 1, "cluster size threshold must be positive");
        let width = image.width();
        self.open.clear();
        self.open.extend_from_slice(image.bits());
        let len = self.open.len();
        if n > len {
            return None;
        }
        let mut id = 0u32;
        for start in 0..len {
            if self.open[start] == 0 {
                continue;
            }
            id += 1;
            self.stack.clear();
            self.members.clear();
            self.open[start] = 0;
            self.stack.push(start);
            self.members.push(start);
            while self.members.len() < n {
                let Some(idx) = self.stack.pop() else { break };
                let open = &mut self.open;
                let stack = &mut self.stack;
                let members = &mut self.members;
                for_each_neighbor(idx, width, len, |nb| {
                    if open[nb] == 1 && members.len() < n {
                        open[nb] = 0;
                        stack.push(nb);
                        members.push(nb);
                    }
                });
            }
            if self.members.len() >= n {
                self.members.sort_unstable();
                let first = self.members[0];
                let mut bbox = BoundingBox::at(first / width, first % width);
                let pixels: Vec<(usize, usize)> = self
                    .members
                    .iter()
                    .map(|&i| {
                        bbox.include(i / width, i % width);
                        (i / width, i % width)
                    })
                    .collect();
                return Some(Cluster {
                    id,
                    size: pixels.len(),
                    pixels: Some(pixels),
                    bbox,
                });
            }
        }
        None
    }
}

/// Size of the largest black cluster, without building a labeling.
pub fn max_black_cluster(image: &BinaryImage) -> usize {
    ClusterScratch::new().max_black_cluster(image)
}

/// Early-stopping search for a black cluster of at least `n` pixels.
pub fn find_cluster_at_least(image: &BinaryImage, n: usize) -> Option<Cluster> {
    ClusterScratch::new().find_cluster_at_least(image, n)
}

/// Whether a black 4-connected path joins column 0 to the last column.
pub fn has_left_right_crossing(image: &BinaryImage) -> bool {
    let (width, bits) = (image.width(), image.bits());
    let len = bits.len();
    let mut seen = vec![false; len];
    let mut stack = Vec::new();
    for row in 0..image.height() {
        let idx = row * width;
        if bits[idx] == 1 {
            seen[idx] = true;
            stack.push(idx);
        }
    }
    while let Some(idx) = stack.pop() {
        if idx % width == width - 1 {
            return true;
        }
        for_each_neighbor(idx, width, len, |n| {
            if bits[n] == 1 && !seen[n] {
                seen[n] = true;
                stack.push(n);
            }
        });
    }
    false
}

/// Maximum number of vertex-disjoint black left-right crossings.
///
/// Computed as a maximum flow with unit vertex capacities between a virtual
/// source attached to column 0 and a virtual sink attached to the last
/// column; by Menger's theorem the flow value is the crossing count.
pub fn count_disjoint_crossings(image: &BinaryImage) -> usize {
    let (width, bits) = (image.width(), image.bits());
    let len = bits.len();
    let source = 2 * len;
    let sink = 2 * len + 1;
    let mut net = FlowNetwork::new(2 * len + 2);
    for idx in 0..len {
        if bits[idx] == 0 {
            continue;
        }
        let (node_in, node_out) = (2 * idx, 2 * idx + 1);
        net.add_edge(node_in, node_out);
        let col = idx % width;
        if col == 0 {
            net.add_edge(source, node_in);
        }
        if col == width - 1 {
            net.add_edge(node_out, sink);
        }
        for_each_neighbor(idx, width, len, |n| {
            if bits[n] == 1 {
                net.add_edge(node_out, 2 * n);
            }
        });
    }
    net.max_flow(source, sink)
}

/// Unit-capacity residual network solved with Dinic's algorithm.
struct FlowNetwork {
    head: Vec<usize>,
    next: Vec<usize>,
    to: Vec<usize>,
    cap: Vec<u8>,
}

const NIL: usize = usize::MAX;

impl FlowNetwork {
    fn new(nodes: usize) -> Self {
        Self {
            head: vec![NIL; nodes],
            next: Vec::new(),
            to: Vec::new(),
            cap: Vec::new(),
        }
    }

    fn add_edge(&mut self, from: usize, to: usize) {
        for (a, b, c) in [(from, to, 1), (to, from, 0)] {
            self.to.push(b);
            self.cap.push(c);
            self.next.push(self.head[a]);
            self.head[a] = self.to.len() - 1;
        }
    }

    fn max_flow(&mut self, source: usize, sink: usize) -> usize {
        let nodes = self.head.len();
        let mut level = vec![u32::MAX; nodes];
        let mut iter = vec![NIL; nodes];
        let mut queue = Vec::with_capacity(nodes);
        let mut path: Vec<usize> = Vec::new();
        let mut flow = 0;
        loop {
            level.fill(u32::MAX);
            level[source] = 0;
            queue.clear();
            queue.push(source);
            let mut qi = 0;
            while qi < queue.len() {
                let u = queue[qi];
                qi += 1;
                let mut e = self.head[u];
                while e != NIL {
                    let v = self.to[e];
                    if self.cap[e] > 0 && level[v] == u32::MAX {
                        level[v] = level[u] + 1;
                        queue.push(v);
                    }
                    e = self.next[e];
                }
            }
            if level[sink] == u32::MAX {
                return flow;
            }
            iter.copy_from_slice(&self.head);

            // blocking flow by iterative depth-first search
            path.clear();
            let mut u = source;
            loop {
                if u == sink {
                    for &e in &path {
                        self.cap[e] -= 1;
                        self.cap[e ^ 1] += 1;
                    }
                    flow += 1;
                    path.clear();
                    u = source;
                    continue;
                }
                let mut advanced = false;
                while iter[u] != NIL {
                    let e = iter[u];
                    let v = self.to[e];
                    if self.cap[e] > 0 && level[v] == level[u] + 1 {
                        path.push(e);
                        u = v;
                        advanced = true;
                        break;
                    }
                    iter[u] = self.next[e];
                }
                if advanced {
                    continue;
                }
                if u == source {
                    break;
                }
                // dead end: retreat and skip the edge that led here
                level[u] = u32::MAX;
                let e = path.pop().expect("non-source node has an entry edge");
                u = self.to[e ^ 1];
                iter[u] = self.next[iter[u]];
            }
        }
    }
}
