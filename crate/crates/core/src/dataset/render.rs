use super::{DatasetError, FactorLabels, FactorSpec, Shape};
use crate::models::{IMAGE_CHANNELS, IMAGE_SIZE, PIXELS};

pub const BACKGROUND: f32 = 0.5;

fn inside(shape: Shape, size: f64, dx: f64, dy: f64) -> bool {
    match shape {
        Shape::Disk => dx * dx + dy * dy < size * size,
        Shape::Square => dx.abs() < size && dy.abs() < size,
        // apex up, base at dy = +size, full width 2·size at the base
        Shape::Triangle => dy > -size && dy < size && dx.abs() < (dy + size) / 2.0,
    }
}

/// CHW pixels of one image with the shape shifted vertically by `jitter`.
pub fn render_jittered(spec: &FactorSpec, labels: &FactorLabels, jitter: i32) -> Result<Vec<f32>, DatasetError> {
    spec.check(labels)?;
    let v = labels.values();
    let shape = spec.shapes[v[0]];
    let hue = spec.hues[v[1]];
    let cx = IMAGE_SIZE as f64 / 2.0 + spec.x_positions[v[2]] as f64;
    let cy = IMAGE_SIZE as f64 / 2.0 + jitter as f64;
    let size = spec.sizes[v[3]] as f64;
    let plane = IMAGE_SIZE * IMAGE_SIZE;
    let mut px = vec![BACKGROUND; PIXELS];
    for row in 0..IMAGE_SIZE {
        for col in 0..IMAGE_SIZE {
            let dx = col as f64 + 0.5 - cx;
            let dy = row as f64 + 0.5 - cy;
            if inside(shape, size, dx, dy) {
                for c in 0..IMAGE_CHANNELS {
                    px[c * plane + row * IMAGE_SIZE + col] = hue[c];
                }
            }
        }
    }
    Ok(px)
}

/// Unjittered image for `labels`.
pub fn render(spec: &FactorSpec, labels: &FactorLabels) -> Result<Vec<f32>, DatasetError> {
    render_jittered(spec, labels, 0)
}
