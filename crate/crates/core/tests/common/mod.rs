use percdetect::lattice::{BinaryImage, Color};

/// Labels by recursive flood fill, numbering clusters in raster order of
/// their first pixel.
pub fn naive_labels(img: &BinaryImage, color: Color) -> Vec<u32> {
    fn fill(img: &BinaryImage, bit: u8, labels: &mut [u32], r: usize, c: usize, id: u32) {
        let w = img.width();
        if img.get(r, c) != bit || labels[r * w + c] != 0 {
            return;
        }
        labels[r * w + c] = id;
        if r > 0 {
            fill(img, bit, labels, r - 1, c, id);
        }
        if r + 1 < img.height() {
            fill(img, bit, labels, r + 1, c, id);
        }
        if c > 0 {
            fill(img, bit, labels, r, c - 1, id);
        }
        if c + 1 < w {
            fill(img, bit, labels, r, c + 1, id);
        }
    }
    let bit = color.bit();
    let mut labels = vec![0u32; img.len()];
    let mut next = 0;
    for r in 0..img.height() {
        for c in 0..img.width() {
            if img.get(r, c) == bit && labels[r * img.width() + c] == 0 {
                next += 1;
                fill(img, bit, &mut labels, r, c, next);
            }
        }
    }
    labels
}
