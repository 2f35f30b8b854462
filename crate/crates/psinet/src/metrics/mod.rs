//! Evaluation suite: region overlap (Dice, Jaccard), shape similarity
//! (exact symmetric Hausdorff over boundary pixel sets), boundary accuracy
//! (trimap misclassification curves), and moment-based ellipse fitting used
//! as optional post-processing.


use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::targets::{distance_transform, extract_boundary, Bitmap, Mask};

/// Trimap band widths used when a run does not configure its own.
pub const DEFAULT_TRIMAP_WIDTHS: [f64; 6] = [1.0, 2.0, 3.0, 5.0, 8.0, 12.0];

/// Set of (row, col) pixel coordinates for one class of one mask.
#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub struct PixelSet(BTreeSet<(usize, usize)>);

impl PixelSet {
    pub fn from_coords(coords: impl IntoIterator<Item = (usize, usize)>) -> Self {
        PixelSet(coords.into_iter().collect())
    }

    pub fn from_bitmap(bitmap: &Bitmap) -> Self {
        let mut set = BTreeSet::new();
        for y in 0..bitmap.height() {
            for x in 0..bitmap.width() {
                if bitmap.get(y, x) {
                    set.insert((y, x));
                }
            }
        }
        PixelSet(set)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &(usize, usize)> {
        self.0.iter()
    }

    fn intersection_size(&self, other: &PixelSet) -> usize {
        self.0.intersection(&other.0).count()
    }
}

/// |A ∩ B| / |A ∪ B|; both sets empty compares as a perfect 1.0.
pub fn jaccard(a: &PixelSet, b: &PixelSet) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let inter = a.intersection_size(b);
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

/// 2|A ∩ B| / (|A| + |B|); both sets empty compares as a perfect 1.0.
pub fn dice(a: &PixelSet, b: &PixelSet) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let inter = a.intersection_size(b);
    2.0 * inter as f64 / (a.len() + b.len()) as f64
}

/// Exact symmetric Hausdorff distance with the Euclidean pixel metric.
/// Undefined (None) when either set is empty; callers exclude such values
/// from averages and report their count.
pub fn hausdorff(a: &PixelSet, b: &PixelSet) -> Option<f64> {
    if a.is_empty() || b.is_empty() {
        return None;
    }
    Some(directed_sq(a, b).max(directed_sq(b, a)).sqrt())
}

fn directed_sq(from: &PixelSet, to: &PixelSet) -> f64 {
    let mut sup = 0.0f64;
    for &(ya, xa) in from.iter() {
        let mut inf = f64::INFINITY;
        for &(yb, xb) in to.iter() {
            let dy = ya as f64 - yb as f64;
            let dx = xa as f64 - xb as f64;
            let d = dy * dy + dx * dx;
            if d < inf {
                inf = d;
            }
        }
        if inf > sup {
            sup = inf;
        }
    }
    sup
}

/// Boundary pixels of every non-background class region.
fn mask_boundary(mask: &Mask) -> Bitmap {
    let mut bits = vec![false; mask.width() * mask.height()];
    for class in 1..=mask.max_label() {
        let bitmap = mask.class_bitmap(class);
        if !bitmap.any() {
            continue;
        }
        let boundary = extract_boundary(&bitmap);
        for (o, &b) in bits.iter_mut().zip(boundary.bits()) {
            *o = *o || b;
        }
    }
    Bitmap::new(mask.width(), mask.height(), bits).expect("same dimensions")
}

/// Misclassification fraction inside bands of the given widths around the
/// ground-truth object boundaries. Each entry is None ("undefined") when
/// the ground truth has no boundary pixels at all.
pub fn trimap_error(pred: &Mask, gt: &Mask, widths: &[f64]) -> Result<Vec<Option<f64>>> {
    if pred.width() != gt.width() || pred.height() != gt.height() {
        return Err(Error::shape(
            "trimap_error",
            format!(
                "{}x{} vs {}x{}",
                pred.width(),
                pred.height(),
                gt.width(),
                gt.height()
            ),
        ));
    }
    if widths.is_empty() || widths.iter().any(|&w| w <= 0.0) || widths.windows(2).any(|p| p[0] >= p[1]) {
        return Err(Error::arg(
            "trimap_error",
            "widths must be positive and strictly ascending",
        ));
    }
    let boundary = mask_boundary(gt);
    if !boundary.any() {
        return Ok(vec![None; widths.len()]);
    }
    let dist = distance_transform(&boundary);
    let mismatch: Vec<bool> = pred
        .labels()
        .iter()
        .zip(gt.labels())
        .map(|(p, g)| p != g)
        .collect();
    let mut out = Vec::with_capacity(widths.len());
    for &w in widths {
        let mut band = 0usize;
        let mut wrong = 0usize;
        for (d, &m) in dist.iter().zip(&mismatch) {
            if *d <= w {
                band += 1;
                if m {
                    wrong += 1;
                }
            }
        }
        out.push(Some(wrong as f64 / band as f64));
    }
    Ok(out)
}

/// Ellipse recovered from image moments: centroid, second-order central
/// moments give the axes and orientation.
#[derive(Clone, Copy, Debug)]
pub struct EllipseParams {
    pub center_y: f64,
    pub center_x: f64,
    /// Semi-axis along `theta`.
    pub semi_major: f64,
    pub semi_minor: f64,
    pub theta: f64,
}

/// Fit an ellipse to the foreground by image moments. None when the input
/// has no foreground.
pub fn fit_ellipse_params(bitmap: &Bitmap) -> Option<EllipseParams> {
    let mut n = 0.0f64;
    let (mut sy, mut sx) = (0.0f64, 0.0f64);
    for y in 0..bitmap.height() {
        for x in 0..bitmap.width() {
            if bitmap.get(y, x) {
                n += 1.0;
                sy += y as f64;
                sx += x as f64;
            }
        }
    }
    if n == 0.0 {
        return None;
    }
    let (cy, cx) = (sy / n, sx / n);
    let (mut syy, mut sxx, mut sxy) = (0.0f64, 0.0f64, 0.0f64);
    for y in 0..bitmap.height() {
        for x in 0..bitmap.width() {
            if bitmap.get(y, x) {
                let dy = y as f64 - cy;
                let dx = x as f64 - cx;
                syy += dy * dy;
                sxx += dx * dx;
                sxy += dx * dy;
            }
        }
    }
    let (syy, sxx, sxy) = (syy / n, sxx / n, sxy / n);
    let theta = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    let mid = 0.5 * (sxx + syy);
    let diff = (0.25 * (sxx - syy) * (sxx - syy) + sxy * sxy).sqrt();
    // Covariance eigenvalues are (semi-axis / 2)^2; degenerate shapes are
    // clamped to half a pixel so rasterization stays well defined.
    let semi_major = (2.0 * (mid + diff).max(0.0).sqrt()).max(0.5);
    let semi_minor = (2.0 * (mid - diff).max(0.0).sqrt()).max(0.5);
    Some(EllipseParams {
        center_y: cy,
        center_x: cx,
        semi_major,
        semi_minor,
        theta,
    })
}

/// Moment-based ellipse fit, rasterized over the input's dimensions.
/// None when the input has no foreground.
pub fn ellipse_fit(bitmap: &Bitmap) -> Option<Bitmap> {
    let p = fit_ellipse_params(bitmap)?;
    let (sin, cos) = p.theta.sin_cos();
    let mut out = Bitmap::empty(bitmap.width(), bitmap.height());
    for y in 0..bitmap.height() {
        for x in 0..bitmap.width() {
            let dy = y as f64 - p.center_y;
            let dx = x as f64 - p.center_x;
            let u = dx * cos + dy * sin;
            let v = -dx * sin + dy * cos;
            let r = (u / p.semi_major).powi(2) + (v / p.semi_minor).powi(2);
            if r <= 1.0 {
                out.set(y, x, true);
            }
        }
    }
    Some(out)
}

/// Replace every non-background class region of a mask with its fitted
/// ellipse; higher class index wins on overlap. Classes whose region is
/// empty stay empty.
pub fn ellipse_fit_mask(mask: &Mask) -> Mask {
    let mut out = Mask::empty(mask.width(), mask.height());
    for class in 1..=mask.max_label() {
        let bitmap = mask.class_bitmap(class);
        let Some(fitted) = ellipse_fit(&bitmap) else {
            continue;
        };
        for y in 0..mask.height() {
            for x in 0..mask.width() {
                if fitted.get(y, x) {
                    out.set_label(y, x, class);
                }
            }
        }
    }
    out
}

/// Metrics of one class of one (prediction, ground truth) pair.
#[derive(Clone, Debug)]
pub struct ClassMetrics {
    pub class: u8,
    pub dice: f64,
    pub jaccard: f64,
    /// None when either boundary set is empty.
    pub hausdorff: Option<f64>,
    /// One entry per configured width; None when the class has no
    /// ground-truth boundary.
    pub trimap: Vec<Option<f64>>,
}

/// Full evaluation of one prediction against its ground truth.
#[derive(Clone, Debug)]
pub struct MetricReport {
    pub widths: Vec<f64>,
    pub classes: Vec<ClassMetrics>,
}

impl MetricReport {
    /// Mean Dice over the non-background classes.
    pub fn mean_dice(&self) -> f64 {
        if self.classes.is_empty() {
            return 0.0;
        }
        self.classes.iter().map(|c| c.dice).sum::<f64>() / self.classes.len() as f64
    }
}

/// Per-class region overlap, boundary Hausdorff, and trimap curves for one
/// mask pair. Dice/Jaccard run on filled region sets, Hausdorff on boundary
/// sets, and the trimap on the class-vs-rest binarization.
pub fn evaluate_pair(
    pred: &Mask,
    gt: &Mask,
    num_classes: usize,
    widths: &[f64],
) -> Result<MetricReport> {
    if pred.width() != gt.width() || pred.height() != gt.height() {
        return Err(Error::shape(
            "evaluate_pair",
            format!(
                "{}x{} vs {}x{}",
                pred.width(),
                pred.height(),
                gt.width(),
                gt.height()
            ),
        ));
    }
    let mut classes = Vec::with_capacity(num_classes.saturating_sub(1));
    for class in 1..num_classes as u8 {
        let pred_region = pred.class_bitmap(class);
        let gt_region = gt.class_bitmap(class);
        let pred_set = PixelSet::from_bitmap(&pred_region);
        let gt_set = PixelSet::from_bitmap(&gt_region);
        let pred_boundary = PixelSet::from_bitmap(&extract_boundary(&pred_region));
        let gt_boundary = PixelSet::from_bitmap(&extract_boundary(&gt_region));

        let binarize = |m: &Mask| {
            Mask::new(
                m.width(),
                m.height(),
                m.labels().iter().map(|&l| u8::from(l == class)).collect(),
            )
            .expect("same dimensions")
        };
        let trimap = trimap_error(&binarize(pred), &binarize(gt), widths)?;

        classes.push(ClassMetrics {
            class,
            dice: dice(&pred_set, &gt_set),
            jaccard: jaccard(&pred_set, &gt_set),
            hausdorff: hausdorff(&pred_boundary, &gt_boundary),
            trimap,
        });
    }
    Ok(MetricReport {
        widths: widths.to_vec(),
        classes,
    })
}

/// Aggregate statistics over many reports: plain means, with undefined
/// Hausdorff / trimap entries excluded and counted.
#[derive(Clone, Debug)]
pub struct Aggregate {
    pub widths: Vec<f64>,
    pub entries: usize,
    pub mean_dice: f64,
    pub mean_jaccard: f64,
    pub mean_hausdorff: Option<f64>,
    pub hausdorff_undefined: usize,
    pub mean_trimap: Vec<Option<f64>>,
    pub trimap_undefined: Vec<usize>,
}

pub fn aggregate(reports: &[MetricReport]) -> Aggregate {
    let widths = reports
        .first()
        .map(|r| r.widths.clone())
        .unwrap_or_default();
    let mut entries = 0usize;
    let (mut dice_sum, mut jaccard_sum) = (0.0, 0.0);
    let (mut hd_sum, mut hd_n, mut hd_undef) = (0.0, 0usize, 0usize);
    let mut tri_sum = vec![0.0f64; widths.len()];
    let mut tri_n = vec![0usize; widths.len()];
    let mut tri_undef = vec![0usize; widths.len()];
    for report in reports {
        for c in &report.classes {
            entries += 1;
            dice_sum += c.dice;
            jaccard_sum += c.jaccard;
            match c.hausdorff {
                Some(h) => {
                    hd_sum += h;
                    hd_n += 1;
                }
                None => hd_undef += 1,
            }
            for (i, t) in c.trimap.iter().enumerate() {
                match t {
                    Some(e) => {
                        tri_sum[i] += e;
                        tri_n[i] += 1;
                    }
                    None => tri_undef[i] += 1,
                }
            }
        }
    }
    Aggregate {
        widths,
        entries,
        mean_dice: if entries > 0 { dice_sum / entries as f64 } else { 0.0 },
        mean_jaccard: if entries > 0 { jaccard_sum / entries as f64 } else { 0.0 },
        mean_hausdorff: (hd_n > 0).then(|| hd_sum / hd_n as f64),
        hausdorff_undefined: hd_undef,
        mean_trimap: tri_sum
            .iter()
            .zip(&tri_n)
            .map(|(s, &n)| (n > 0).then(|| s / n as f64))
            .collect(),
        trimap_undefined: tri_undef,
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Per-sample metric CSV: one row per (sample, class), undefined values
/// left empty.
pub fn write_per_sample_csv<W: std::io::Write>(
    out: &mut W,
    rows: &[(String, MetricReport)],
    widths: &[f64],
) -> std::io::Result<()> {
    write!(out, "sample_id,class,dice,jaccard,hausdorff")?;
    for w in widths {
        write!(out, ",trimap_w{w}")?;
    }
    writeln!(out)?;
    for (id, report) in rows {
        for c in &report.classes {
            write!(out, "{id},{},{},{},{}", c.class, c.dice, c.jaccard, fmt_opt(c.hausdorff))?;
            for t in &c.trimap {
                write!(out, ",{}", fmt_opt(*t))?;
            }
            writeln!(out)?;
        }
    }
    Ok(())
}

/// Aggregate CSV: single row of means plus the undefined-Hausdorff count.
pub fn write_aggregate_csv<W: std::io::Write>(out: &mut W, agg: &Aggregate) -> std::io::Result<()> {
    write!(out, "entries,dice,jaccard,hausdorff,hausdorff_undefined")?;
    for w in &agg.widths {
        write!(out, ",trimap_w{w}")?;
    }
    writeln!(out)?;
    write!(
        out,
        "{},{},{},{},{}",
        agg.entries,
        agg.mean_dice,
        agg.mean_jaccard,
        fmt_opt(agg.mean_hausdorff),
        agg.hausdorff_undefined
    )?;
    for t in &agg.mean_trimap {
        write!(out, ",{}", fmt_opt(*t))?;
    }
    writeln!(out)
}

/// Trimap curve CSV ready for plotting: one row per width.
pub fn write_trimap_curve_csv<W: std::io::Write>(out: &mut W, agg: &Aggregate) -> std::io::Result<()> {
    writeln!(out, "width,error_fraction")?;
    for (w, e) in agg.widths.iter().zip(&agg.mean_trimap) {
        writeln!(out, "{w},{}", fmt_opt(*e))?;
    }
    Ok(())
}
