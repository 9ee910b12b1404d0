//! Static report artifacts: CSV tables, the comparison summary, PGM grids.

use std::fmt::Write as _;

use mhae_core::eval::{AggregateReport, Comparison, PerClassStats, TrialOutcome, TrialReport};

/// Binary greymap (P5, maxval 255).
pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    assert_eq!(
        pixels.len(),
        width * height,
        "pixel count does not match PGM size"
    );
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Lays out `inputs` side by side on the top row and `reconstructions` below
/// them. Each image is `shape.0` rows by `shape.1` columns.
/// Returns `(width, height, pixels)`.
pub fn reconstruction_grid(
    inputs: &[&[f64]],
    reconstructions: &[&[f64]],
    shape: (usize, usize),
) -> (usize, usize, Vec<u8>) {
    assert_eq!(inputs.len(), reconstructions.len());
    let (rows, cols) = shape;
    let n = inputs.len();
    let width = n * cols;
    let height = 2 * rows;
    let mut pixels = vec![0u8; width * height];
    for (band, images) in [inputs, reconstructions].iter().enumerate() {
        for (i, img) in images.iter().enumerate() {
            for r in 0..rows {
                for c in 0..cols {
                    let y = band * rows + r;
                    let x = i * cols + c;
                    pixels[y * width + x] = to_byte(img[r * cols + c]);
                }
            }
        }
    }
    (width, height, pixels)
}

pub const METRICS_HEADER: &str = "seed,model,auroc,mean_mse_normal,mean_mse_all";

pub fn metrics_row(r: &TrialReport) -> String {
    format!(
        "{},{},{},{},{}",
        r.seed, r.model, r.auroc, r.mean_mse_normal, r.mean_mse_all
    )
}

pub fn metrics_csv(reports: &[&TrialReport]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in reports {
        s.push_str(&metrics_row(r));
        s.push('\n');
    }
    s
}

/// One row per digit: summary statistics followed by histogram counts over
/// the shared range `[0, range_max]`.
pub fn histogram_csv(stats: &PerClassStats) -> String {
    let mut s = String::from("class,count,mean,std,min,max");
    for b in 0..stats.bins {
        let lo = stats.range_max * b as f64 / stats.bins as f64;
        write!(s, ",bin_{lo}").unwrap();
    }
    s.push('\n');
    for c in &stats.classes {
        write!(
            s,
            "{},{},{},{},{},{}",
            c.digit, c.count, c.mean, c.std, c.min, c.max
        )
        .unwrap();
        for h in &c.histogram {
            write!(s, ",{h}").unwrap();
        }
        s.push('\n');
    }
    s
}

/// Per-trial rows for every successful model run.
pub fn trials_csv(cmp: &Comparison) -> String {
    let reports: Vec<&TrialReport> = cmp
        .trials
        .iter()
        .flat_map(|t| [t.ae.report(), t.mhae.report()])
        .flatten()
        .collect();
    metrics_csv(&reports)
}

pub const SUMMARY_HEADER: &str =
    "model,trials,failed,auroc_mean,auroc_std,mse_mean,mse_std,mse_all_mean,mse_all_std";

pub fn summary_csv(cmp: &Comparison) -> String {
    let mut s = String::from(SUMMARY_HEADER);
    s.push('\n');
    for a in [&cmp.ae, &cmp.mhae].into_iter().flatten() {
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            a.model,
            a.trials,
            a.failed,
            a.auroc_mean,
            a.auroc_std,
            a.mse_mean,
            a.mse_std,
            a.mse_all_mean,
            a.mse_all_std
        )
        .unwrap();
    }
    s
}

fn label(a: &AggregateReport) -> &'static str {
    match a.model {
        mhae_core::eval::ModelKind::Ae => "AE",
        mhae_core::eval::ModelKind::Mhae => "MH-AE",
    }
}

/// Human-readable AUROC / MSE table, mean ± sample std over trials.
pub fn summary_text(cmp: &Comparison) -> String {
    let mut s = String::new();
    writeln!(
        s,
        "{:<8} {:>20} {:>22} {:>7}",
        "Model", "AUROC", "MSE (normal class)", "trials"
    )
    .unwrap();
    for a in [&cmp.ae, &cmp.mhae].into_iter().flatten() {
        writeln!(
            s,
            "{:<8} {:>10.5} ± {:<7.5} {:>11.5} ± {:<8.5} {:>7}",
            label(a),
            a.auroc_mean,
            a.auroc_std,
            a.mse_mean,
            a.mse_std,
            a.trials
        )
        .unwrap();
    }
    let failures: Vec<String> = cmp
        .trials
        .iter()
        .flat_map(|t| {
            [("ae", &t.ae), ("mhae", &t.mhae)]
                .into_iter()
                .filter_map(move |(name, o)| match o {
                    TrialOutcome::Failed(msg) => Some(format!("seed {} {name}: {msg}", t.seed)),
                    TrialOutcome::Ok(_) => None,
                })
        })
        .collect();
    if !failures.is_empty() {
        writeln!(s, "\nfailed trials ({}):", failures.len()).unwrap();
        for f in failures {
            writeln!(s, "  {f}").unwrap();
        }
    }
    s
}
