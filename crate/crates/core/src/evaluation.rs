//! Cross-likelihood matrices, discrimination margins, degenerate-input
//! tables and their reports.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::density::{DensityModel, ModelFamily};
use crate::error::{Error, Result};

/// Values beyond this magnitude are rendered as sentinels in text reports.
pub const OVERFLOW: f64 = 1e15;

/// Number of noise draws averaged per noise-input entry.
pub const NOISE_DRAWS: usize = 32;

/// Standard deviation of the noise input.
pub const NOISE_INPUT_STD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossLikelihoodMatrix {
    /// `values[i][j]`: mean log-likelihood per sample of source-`i` frames under prior `j`
    pub values: Vec<Vec<f64>>,
    pub labels: Vec<String>,
    pub family: String,
    pub units: String,
    /// data noise added to the test frames
    pub data_sigma: f64,
    /// conditioning level of the priors
    pub cond_sigma: f64,
}

impl CrossLikelihoodMatrix {
    pub fn size(&self) -> usize {
        self.values.len()
    }

    pub fn file_stem(&self) -> String {
        format!("xll_{}_sigma{}_cond{}", self.family, self.data_sigma, self.cond_sigma)
    }
}

/// Add `N(0, σ²)` to every frame of every set, reproducibly per seed.
fn noised_sets(test_sets: &[Vec<Vec<f64>>], sigma: f64, seed: u64) -> Vec<Vec<Vec<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    test_sets
        .iter()
        .map(|set| {
            set.iter()
                .map(|f| {
                    f.iter()
                        .map(|&v| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            v + sigma * z
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// Mean per-sample log-likelihood of every test set under every model.
pub fn cross_likelihood(
    models: &[&dyn DensityModel],
    labels: &[String],
    test_sets: &[Vec<Vec<f64>>],
    data_sigma: f64,
    seed: u64,
) -> Result<CrossLikelihoodMatrix> {
    let k = models.len();
    if k == 0 || test_sets.len() != k || labels.len() != k {
        return Err(Error::InvalidArgument(format!(
            "{k} models, {} test sets, {} labels",
            test_sets.len(),
            labels.len()
        )));
    }
    if test_sets.iter().any(|s| s.is_empty()) {
        return Err(Error::InvalidArgument("empty test set".into()));
    }
    if !(data_sigma >= 0.0 && data_sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("data sigma must be >= 0, got {data_sigma}")));
    }
    let family = models[0].family();
    let noisy;
    let sets: &[Vec<Vec<f64>>] = if data_sigma > 0.0 {
        noisy = noised_sets(test_sets, data_sigma, seed);
        &noisy
    } else {
        test_sets
    };
    let jobs: Vec<(usize, usize, usize)> = (0..k)
        .flat_map(|i| (0..k).flat_map(move |j| (0..sets[i].len()).map(move |f| (i, j, f))))
        .collect();
    let lls: Vec<Result<f64>> = jobs.par_iter().map(|&(i, j, f)| models[j].log_density(&sets[i][f])).collect();
    let mut values = vec![vec![0.0; k]; k];
    let mut it = lls.into_iter();
    for i in 0..k {
        for j in 0..k {
            let mut sum = 0.0;
            for _ in 0..sets[i].len() {
                sum += it.next().expect("one result per job")?;
            }
            values[i][j] = sum / sets[i].len() as f64;
        }
    }
    Ok(CrossLikelihoodMatrix {
        values,
        labels: labels.to_vec(),
        family: family.name().to_string(),
        units: family.units().to_string(),
        data_sigma,
        cond_sigma: 0.0,
    })
}

/// Cross-likelihood of tagged checkpoints. Mixed families or conditioning
/// levels are refused unless `force` is set.
pub fn cross_likelihood_checkpoints(
    checkpoints: &[&Checkpoint],
    test_sets: &[Vec<Vec<f64>>],
    data_sigma: f64,
    seed: u64,
    force: bool,
) -> Result<CrossLikelihoodMatrix> {
    let first = checkpoints.first().ok_or_else(|| Error::InvalidArgument("no checkpoints".into()))?;
    if !force {
        if let Some(c) = checkpoints.iter().find(|c| c.family() != first.family()) {
            return Err(Error::InvalidArgument(format!(
                "mixed model families ({} and {}); pass force to compare anyway",
                first.family(),
                c.family()
            )));
        }
        if let Some(c) = checkpoints.iter().find(|c| c.sigma != first.sigma) {
            return Err(Error::InvalidArgument(format!(
                "mixed conditioning levels (sigma {} and {}); pass force to compare anyway",
                first.sigma, c.sigma
            )));
        }
    }
    let models: Vec<&dyn DensityModel> = checkpoints.iter().map(|c| &c.model as &dyn DensityModel).collect();
    let labels: Vec<String> = checkpoints.iter().map(|c| c.source.name().to_string()).collect();
    let mut m = cross_likelihood(&models, &labels, test_sets, data_sigma, seed)?;
    m.cond_sigma = first.sigma;
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscriminationReport {
    /// per prior `j`: in-class LL minus the best out-of-class LL in column `j`
    pub margins: Vec<f64>,
    pub dominant: Vec<bool>,
    pub all_dominant: bool,
}

pub fn discrimination_report(values: &[Vec<f64>]) -> Result<DiscriminationReport> {
    let k = values.len();
    if k == 0 || values.iter().any(|r| r.len() != k) {
        return Err(Error::InvalidArgument("discrimination report needs a non-empty square matrix".into()));
    }
    let margins: Vec<f64> = (0..k)
        .map(|j| {
            let best_out = (0..k).filter(|&i| i != j).map(|i| values[i][j]).fold(f64::NEG_INFINITY, f64::max);
            values[j][j] - best_out
        })
        .collect();
    let dominant: Vec<bool> = margins.iter().map(|&m| m > 0.0).collect();
    let all_dominant = dominant.iter().all(|&d| d);
    Ok(DiscriminationReport { margins, dominant, all_dominant })
}

/// Per row `i`: whether the diagonal entry strictly exceeds every other
/// entry of the row.
pub fn row_dominance(values: &[Vec<f64>]) -> Vec<bool> {
    values
        .iter()
        .enumerate()
        .map(|(i, row)| row.iter().enumerate().all(|(j, &v)| j == i || row[i] > v))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DegenerateInput {
    /// one frame of zeros
    Constant,
    /// `N(0, 0.5²)` samples
    Noise,
}

impl DegenerateInput {
    pub fn name(self) -> &'static str {
        match self {
            DegenerateInput::Constant => "constant-0",
            DegenerateInput::Noise => "noise-N(0,0.5)",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DegenerateRow {
    pub input: DegenerateInput,
    pub sigma: f64,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DegenerateTable {
    pub labels: Vec<String>,
    pub frame_len: usize,
    pub seed: u64,
    pub rows: Vec<DegenerateRow>,
}

/// Mean log-likelihood of a zero frame and of Gaussian noise frames under
/// each prior of each conditioning level. `prior_sets[l]` holds the priors
/// tagged `sigmas[l]`, in label order.
pub fn degenerate_input_table(
    prior_sets: &[Vec<&dyn DensityModel>],
    sigmas: &[f64],
    labels: &[String],
    frame_len: usize,
    seed: u64,
) -> Result<DegenerateTable> {
    if prior_sets.len() != sigmas.len() || prior_sets.iter().any(|p| p.len() != labels.len()) {
        return Err(Error::InvalidArgument("one prior per label for every sigma level".into()));
    }
    let zero = vec![0.0; frame_len];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise: Vec<Vec<f64>> = (0..NOISE_DRAWS)
        .map(|_| {
            (0..frame_len)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    NOISE_INPUT_STD * z
                })
                .collect()
        })
        .collect();
    let mut rows = Vec::new();
    for input in [DegenerateInput::Constant, DegenerateInput::Noise] {
        for (priors, &sigma) in prior_sets.iter().zip(sigmas) {
            let values = priors
                .par_iter()
                .map(|p| -> Result<f64> {
                    match input {
                        DegenerateInput::Constant => p.log_density(&zero),
                        DegenerateInput::Noise => {
                            let mut s = 0.0;
                            for f in &noise {
                                s += p.log_density(f)?;
                            }
                            Ok(s / noise.len() as f64)
                        }
                    }
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(DegenerateRow { input, sigma, values });
        }
    }
    Ok(DegenerateTable { labels: labels.to_vec(), frame_len, seed, rows })
}

/// Text token for a value: sentinels beyond [`OVERFLOW`], else scientific.
pub fn render_value(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v <= -OVERFLOW {
        "-inf*".into()
    } else if v >= OVERFLOW {
        "+inf*".into()
    } else {
        format!("{v:.3e}")
    }
}

const SHADES: &[u8] = b" .:-=+*#%@";

/// Fixed-width grid; each cell shows the value and a shade normalized over
/// the finite, non-overflowing entries (`@` highest).
pub fn text_heatmap(m: &CrossLikelihoodMatrix) -> String {
    let in_range = |v: f64| v.is_finite() && v.abs() < OVERFLOW;
    let finite: Vec<f64> = m.values.iter().flatten().cloned().filter(|&v| in_range(v)).collect();
    let lo = finite.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let shade = |v: f64| -> char {
        if !in_range(v) {
            return if v > 0.0 { '@' } else { ' ' };
        }
        let t = if hi > lo { (v - lo) / (hi - lo) } else { 1.0 };
        SHADES[((t * (SHADES.len() - 1) as f64).round() as usize).min(SHADES.len() - 1)] as char
    };
    let mut out = String::new();
    out.push_str(&format!(
        "# {} priors, data sigma {}, conditioning sigma {}, {}\n",
        m.family, m.data_sigma, m.cond_sigma, m.units
    ));
    out.push_str("# rows: data source, columns: prior\n");
    out.push_str(&format!("{:>10}", "data\\prior"));
    for l in &m.labels {
        out.push_str(&format!(" {:>13}", l));
    }
    out.push('\n');
    for (label, row) in m.labels.iter().zip(&m.values) {
        out.push_str(&format!("{:>10}", label));
        for &v in row {
            let s = shade(v);
            out.push_str(&format!(" {:>10} {}{}", render_value(v), s, s));
        }
        out.push('\n');
    }
    out
}

/// CSV with a header of prior labels and one row per data source; values at
/// full precision.
pub fn matrix_csv(m: &CrossLikelihoodMatrix) -> String {
    let mut out = String::from("source");
    for l in &m.labels {
        out.push(',');
        out.push_str(l);
    }
    out.push('\n');
    for (label, row) in m.labels.iter().zip(&m.values) {
        out.push_str(label);
        for v in row {
            out.push_str(&format!(",{v:?}"));
        }
        out.push('\n');
    }
    out
}

/// Parse [`matrix_csv`] output back into labels and values.
pub fn parse_matrix_csv(text: &str) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let bad = |r: &str| Error::format("<csv>", r.to_string());
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty csv"))?;
    let labels: Vec<String> = header.split(',').skip(1).map(String::from).collect();
    let mut values = Vec::new();
    for line in lines.filter(|l| !l.is_empty()) {
        let row = line
            .split(',')
            .skip(1)
            .map(|v| v.parse::<f64>().map_err(|_| bad(&format!("bad value '{v}'"))))
            .collect::<Result<Vec<f64>>>()?;
        if row.len() != labels.len() {
            return Err(bad("ragged row"));
        }
        values.push(row);
    }
    Ok((labels, values))
}

pub fn degenerate_csv(t: &DegenerateTable) -> String {
    let mut out = String::from("input,sigma");
    for l in &t.labels {
        out.push(',');
        out.push_str(l);
    }
    out.push('\n');
    for r in &t.rows {
        // the noise name holds a comma
        out.push_str(&format!("\"{}\",{}", r.input.name(), r.sigma));
        for v in &r.values {
            out.push_str(&format!(",{v:?}"));
        }
        out.push('\n');
    }
    out
}

pub fn degenerate_text(t: &DegenerateTable) -> String {
    let mut out = format!("{:>16} {:>7}", "input", "sigma");
    for l in &t.labels {
        out.push_str(&format!(" {:>10}", l));
    }
    out.push('\n');
    for r in &t.rows {
        out.push_str(&format!("{:>16} {:>7}", r.input.name(), r.sigma));
        for &v in &r.values {
            out.push_str(&format!(" {:>10}", render_value(v)));
        }
        out.push('\n');
    }
    out
}

/// Provenance of one checkpoint used in a report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckpointRef {
    pub path: String,
    pub hash: String,
    pub source: String,
    pub sigma: f64,
}

impl CheckpointRef {
    pub fn new(path: &Path, ck: &Checkpoint) -> Self {
        CheckpointRef {
            path: path.display().to_string(),
            hash: ck.hash(),
            source: ck.source.name().to_string(),
            sigma: ck.sigma,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MatrixSummary<'a> {
    pub matrix: &'a CrossLikelihoodMatrix,
    pub report: &'a DiscriminationReport,
    pub row_dominant: Vec<bool>,
    pub seed: u64,
    pub checkpoints: &'a [CheckpointRef],
}

/// Write `<stem>.csv`, `<stem>.txt` and `<stem>.json` for a matrix.
pub fn emit_matrix_reports(
    m: &CrossLikelihoodMatrix,
    checkpoints: &[CheckpointRef],
    seed: u64,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let report = discrimination_report(&m.values)?;
    let stem = m.file_stem();
    let csv = out_dir.join(format!("{stem}.csv"));
    let txt = out_dir.join(format!("{stem}.txt"));
    let json = out_dir.join(format!("{stem}.json"));
    write_file(&csv, &matrix_csv(m))?;
    let mut heat = text_heatmap(m);
    heat.push_str(&format!(
        "margins: {}\ncolumn dominance: {}\n",
        report.margins.iter().map(|&v| render_value(v)).collect::<Vec<_>>().join(" "),
        if report.all_dominant { "all priors" } else { "not all priors" }
    ));
    write_file(&txt, &heat)?;
    let summary = MatrixSummary { matrix: m, report: &report, row_dominant: row_dominance(&m.values), seed, checkpoints };
    write_file(&json, &serde_json::to_string_pretty(&summary).expect("summary serializes"))?;
    Ok(vec![csv, txt, json])
}

#[derive(Debug, Clone, Serialize)]
pub struct DegenerateSummary<'a> {
    pub table: &'a DegenerateTable,
    pub family: String,
    pub units: String,
    pub checkpoints: &'a [CheckpointRef],
}

/// Write `degenerate_<family>.{csv,txt,json}`.
pub fn emit_degenerate_reports(
    t: &DegenerateTable,
    family: ModelFamily,
    checkpoints: &[CheckpointRef],
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let stem = format!("degenerate_{}", family.name());
    let csv = out_dir.join(format!("{stem}.csv"));
    let txt = out_dir.join(format!("{stem}.txt"));
    let json = out_dir.join(format!("{stem}.json"));
    write_file(&csv, &degenerate_csv(t))?;
    write_file(&txt, &degenerate_text(t))?;
    let summary = DegenerateSummary {
        table: t,
        family: family.name().to_string(),
        units: family.units().to_string(),
        checkpoints,
    };
    write_file(&json, &serde_json::to_string_pretty(&summary).expect("summary serializes"))?;
    Ok(vec![csv, txt, json])
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Sign-preserving log scale `sign(x) log10(1 + |x|)`, used to compare
/// likelihood values in orders of magnitude.
pub fn signed_log10(x: f64) -> f64 {
    x.signum() * x.abs().ln_1p() / std::f64::consts::LN_10
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::separation::GaussianPrior;

    fn labels(k: usize) -> Vec<String> {
        (0..k).map(|i| format!("s{i}")).collect()
    }

    fn gaussian_sets(k: usize, n: usize, len: usize, seed: u64) -> Vec<Vec<Vec<f64>>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..k)
            .map(|i| {
                (0..n)
                    .map(|_| {
                        (0..len)
                            .map(|_| {
                                let z: f64 = StandardNormal.sample(&mut rng);
                                i as f64 + 0.3 * z
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn single_prior_matrix_is_in_class_mean() {
        let g = GaussianPrior::standard();
        let sets = gaussian_sets(1, 5, 16, 1);
        let m = cross_likelihood(&[&g], &labels(1), &sets, 0.0, 0).unwrap();
        let mean = sets[0].iter().map(|f| g.log_density(f).unwrap()).sum::<f64>() / 5.0;
        assert_eq!(m.values, vec![vec![mean]]);
    }

    #[test]
    fn identical_models_give_constant_rows() {
        let g = GaussianPrior::standard();
        let sets = gaussian_sets(3, 4, 8, 2);
        let m = cross_likelihood(&[&g, &g, &g], &labels(3), &sets, 0.0, 0).unwrap();
        for row in &m.values {
            assert!(row.iter().all(|&v| v == row[0]));
        }
    }

    #[test]
    fn zero_data_noise_is_bitwise_noise_free() {
        let p: Vec<GaussianPrior> = (0..3).map(|i| GaussianPrior::new(i as f64, 0.2).unwrap()).collect();
        let dm: Vec<&dyn DensityModel> = p.iter().map(|g| g as &dyn DensityModel).collect();
        let sets = gaussian_sets(3, 6, 8, 3);
        let a = cross_likelihood(&dm, &labels(3), &sets, 0.0, 1).unwrap();
        let b = cross_likelihood(&dm, &labels(3), &sets, 0.0, 99).unwrap();
        assert_eq!(a.values, b.values);
        let c = cross_likelihood(&dm, &labels(3), &sets, 0.1, 1).unwrap();
        assert_ne!(a.values, c.values);
        assert_eq!(c, cross_likelihood(&dm, &labels(3), &sets, 0.1, 1).unwrap());
        assert!(row_dominance(&a.values).iter().all(|&d| d));
        assert!(discrimination_report(&a.values).unwrap().all_dominant);
    }

    #[test]
    fn subsample_mean_within_three_standard_errors() {
        let g = GaussianPrior::new(0.2, 0.5).unwrap();
        let sets = gaussian_sets(1, 200, 8, 4);
        let full = cross_likelihood(&[&g], &labels(1), &sets, 0.0, 0).unwrap().values[0][0];
        let sub: Vec<f64> = sets[0][..10].iter().map(|f| g.log_density(f).unwrap()).collect();
        let mean = sub.iter().sum::<f64>() / 10.0;
        let var = sub.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 9.0;
        assert!((mean - full).abs() <= 3.0 * (var / 10.0).sqrt());
    }

    #[test]
    fn report_cases() {
        let diag = vec![vec![0.0, -10.0, -10.0], vec![-10.0, 0.0, -10.0], vec![-10.0, -10.0, 0.0]];
        let r = discrimination_report(&diag).unwrap();
        assert_eq!(r.margins, vec![10.0; 3]);
        assert!(r.all_dominant);
        let flat = vec![vec![1.5; 3]; 3];
        let r = discrimination_report(&flat).unwrap();
        assert_eq!(r.margins, vec![0.0; 3]);
        assert!(!r.all_dominant && r.dominant.iter().all(|&d| !d));
        assert!(discrimination_report(&[vec![1.0, 2.0]]).is_err());
        let shifted: Vec<Vec<f64>> = diag.iter().map(|r| r.iter().map(|v| v + 123.25).collect()).collect();
        assert_eq!(discrimination_report(&shifted).unwrap().margins, vec![10.0; 3]);
    }

    #[test]
    fn rows_and_columns_differ() {
        // column 0 is dominant but row 1 is not
        let m = vec![vec![0.0, -1.0], vec![-5.0, -6.0]];
        assert_eq!(row_dominance(&m), vec![true, false]);
        assert_eq!(discrimination_report(&m).unwrap().dominant, vec![true, false]);
    }

    #[test]
    fn csv_roundtrip_is_bitwise() {
        let m = CrossLikelihoodMatrix {
            values: vec![vec![0.1 + 0.2, -1.0 / 3.0], vec![-2.7e13, f64::MIN_POSITIVE]],
            labels: labels(2),
            family: "flow".into(),
            units: "u".into(),
            data_sigma: 0.077,
            cond_sigma: 0.077,
        };
        let (l, v) = parse_matrix_csv(&matrix_csv(&m)).unwrap();
        assert_eq!(l, m.labels);
        for (a, b) in v.iter().flatten().zip(m.values.iter().flatten()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(m.file_stem(), "xll_flow_sigma0.077_cond0.077");
    }

    #[test]
    fn overflow_is_rendered_as_sentinel() {
        let m = CrossLikelihoodMatrix {
            values: vec![vec![4.8, -2.7e16], vec![3e15, -1.0]],
            labels: labels(2),
            family: "flow".into(),
            units: "u".into(),
            data_sigma: 0.0,
            cond_sigma: 0.0,
        };
        let text = text_heatmap(&m);
        assert!(text.contains("-inf*") && text.contains("+inf*"));
        assert!(!text.contains("2.7e16") && !text.contains("2.700e16"));
        assert_eq!(render_value(-7.0e2), "-7.000e2");
    }

    #[test]
    fn degenerate_table_layout_and_determinism() {
        let a = GaussianPrior::standard();
        let b = GaussianPrior::new(0.5, 0.1).unwrap();
        let sets = vec![vec![&a as &dyn DensityModel, &b], vec![&b as &dyn DensityModel, &a]];
        let t = degenerate_input_table(&sets, &[0.0, 0.359], &labels(2), 32, 7).unwrap();
        assert_eq!(t.rows.len(), 4);
        assert_eq!(t.rows[0].input, DegenerateInput::Constant);
        assert_eq!(t.rows[3].input, DegenerateInput::Noise);
        assert_eq!(t.rows[0].values[0], a.log_density(&[0.0; 32]).unwrap());
        assert_eq!(t, degenerate_input_table(&sets, &[0.0, 0.359], &labels(2), 32, 7).unwrap());
        // noise with std 0.5 under N(0, 1): expected log-density -0.5 ln 2π - 0.125
        let expected = -0.5 * (2.0 * std::f64::consts::PI).ln() - 0.125;
        assert!((t.rows[2].values[0] - expected).abs() < 0.02);
    }

    #[test]
    fn reports_written_with_provenance() {
        let dir = tempfile::tempdir().unwrap();
        let g = GaussianPrior::standard();
        let m = cross_likelihood(&[&g], &labels(1), &gaussian_sets(1, 2, 4, 5), 0.0, 0).unwrap();
        let refs = vec![CheckpointRef { path: "x.ck".into(), hash: "abcdef012345".into(), source: "sine".into(), sigma: 0.0 }];
        let files = emit_matrix_reports(&m, &refs, 11, dir.path()).unwrap();
        assert_eq!(files.len(), 3);
        let json = std::fs::read_to_string(&files[2]).unwrap();
        assert!(json.contains("abcdef012345") && json.contains("\"seed\": 11"));
    }

    #[test]
    fn signed_log_scale() {
        assert_eq!(signed_log10(0.0), 0.0);
        assert!((signed_log10(99.0) - 2.0).abs() < 1e-12);
        assert!((signed_log10(-9.0) + 1.0).abs() < 1e-12);
    }
}
