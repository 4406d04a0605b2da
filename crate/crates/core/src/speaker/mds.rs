use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};

use super::SpeakerError;

/// Classical MDS: double-centre the squared distances and keep the top
/// `out_dim` eigenpairs. Negative eigenvalues contribute zero coordinates.
pub fn mds_embed(distances: &[Vec<f64>], out_dim: usize) -> Result<Vec<Vec<f64>>, SpeakerError> {
    let n = distances.len();
    if n == 0 {
        return Err(SpeakerError::TooFew { needed: 1, got: 0 });
    }
    let scale = distances.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-9 * scale.max(1.0);
    for (i, row) in distances.iter().enumerate() {
        if row.len() != n {
            return Err(SpeakerError::BadDistances("square"));
        }
        if row[i].abs() > tol {
            return Err(SpeakerError::BadDistances("zero on the diagonal"));
        }
        for (j, &v) in row.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(SpeakerError::BadDistances("finite and non-negative"));
            }
            if (v - distances[j][i]).abs() > tol {
                return Err(SpeakerError::BadDistances("symmetric"));
            }
        }
    }

    let d2 = DMatrix::from_fn(n, n, |i, j| distances[i][j].powi(2));
    let row_means: Vec<f64> = (0..n).map(|i| d2.row(i).sum() / n as f64).collect();
    let grand = row_means.iter().sum::<f64>() / n as f64;
    let b = DMatrix::from_fn(n, n, |i, j| -0.5 * (d2[(i, j)] - row_means[i] - row_means[j] + grand));
    let eig = SymmetricEigen::new(b);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let mut coords = vec![vec![0.0; out_dim]; n];
    for (k, &e) in order.iter().take(out_dim).enumerate() {
        let lambda = eig.eigenvalues[e].max(0.0).sqrt();
        let col = eig.eigenvectors.column(e);
        // Fix the sign so the largest-magnitude entry is positive.
        let pivot = col.iter().fold(0.0f64, |best, &v| if v.abs() > best.abs() { v } else { best });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for (i, row) in coords.iter_mut().enumerate() {
            row[k] = sign * lambda * col[i];
        }
    }
    Ok(coords)
}

/// Mean silhouette coefficient with Euclidean distance. Points in singleton
/// clusters score 0.
pub fn silhouette(points: &[Vec<f64>], labels: &[usize]) -> f64 {
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let clusters: std::collections::BTreeSet<usize> = labels.iter().copied().collect();
    if clusters.len() < 2 || points.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for (i, p) in points.iter().enumerate() {
        let mean_to = |c: usize| {
            let (sum, cnt) = points
                .iter()
                .zip(labels)
                .enumerate()
                .filter(|&(j, (_, &l))| l == c && j != i)
                .fold((0.0, 0usize), |(s, n), (_, (q, _))| (s + dist(p, q), n + 1));
            (cnt > 0).then(|| sum / cnt as f64)
        };
        let Some(a) = mean_to(labels[i]) else { continue };
        let b = clusters
            .iter()
            .filter(|&&c| c != labels[i])
            .filter_map(|&c| mean_to(c))
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    total / points.len() as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct MdsPoint {
    pub id: String,
    pub speaker: String,
    pub x: f64,
    pub y: f64,
}

pub fn write_mds_csv(path: impl AsRef<Path>, points: &[MdsPoint]) -> Result<(), SpeakerError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "id,speaker,x,y")?;
    for p in points {
        writeln!(f, "{},{},{},{}", p.id, p.speaker, p.x, p.y)?;
    }
    f.flush()?;
    Ok(())
}

/// Scatter plot with one colour per speaker.
pub fn write_scatter_png(path: impl AsRef<Path>, points: &[MdsPoint]) -> Result<(), SpeakerError> {
    const SIZE: u32 = 400;
    const MARGIN: f64 = 20.0;
    const PALETTE: [[u8; 3]; 8] = [
        [230, 25, 75],
        [60, 180, 75],
        [0, 130, 200],
        [245, 130, 48],
        [145, 30, 180],
        [70, 240, 240],
        [240, 50, 230],
        [128, 128, 0],
    ];
    let mut speakers: Vec<&str> = points.iter().map(|p| p.speaker.as_str()).collect();
    speakers.sort_unstable();
    speakers.dedup();
    let (mut lo_x, mut hi_x, mut lo_y, mut hi_y) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in points {
        lo_x = lo_x.min(p.x);
        hi_x = hi_x.max(p.x);
        lo_y = lo_y.min(p.y);
        hi_y = hi_y.max(p.y);
    }
    let span = (hi_x - lo_x).max(hi_y - lo_y).max(1e-12);
    let usable = SIZE as f64 - 2.0 * MARGIN;
    let mut img = image::RgbImage::from_pixel(SIZE, SIZE, image::Rgb([255, 255, 255]));
    for p in points {
        let colour = PALETTE[speakers.binary_search(&p.speaker.as_str()).unwrap_or(0) % PALETTE.len()];
        let cx = MARGIN + (p.x - lo_x) / span * usable;
        let cy = SIZE as f64 - MARGIN - (p.y - lo_y) / span * usable;
        for dy in -3i32..=3 {
            for dx in -3i32..=3 {
                if dx * dx + dy * dy > 9 {
                    continue;
                }
                let (x, y) = (cx as i32 + dx, cy as i32 + dy);
                if (0..SIZE as i32).contains(&x) && (0..SIZE as i32).contains(&y) {
                    img.put_pixel(x as u32, y as u32, image::Rgb(colour));
                }
            }
        }
    }
    img.save(path).map_err(|e| SpeakerError::Store(e.to_string()))
}
