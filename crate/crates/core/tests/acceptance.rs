//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria 5-7 need trained flow priors. They are looked up in
//! `PSEP_ACCEPTANCE_WORKDIR` (default `target/acceptance-work`) and trained
//! there through the CLI when missing, which takes a little over an hour on
//! one core. `PSEP_ACCEPTANCE_ONLY=1,4,9` runs a subset.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use psep::ar::{ArConfig, ArModel};
use psep::checkpoint::find_checkpoint;
use psep::config::RunConfig;
use psep::density::{DensityModel, ModelFamily};
use psep::diffcore::Tensor;
use psep::evaluation::{discrimination_report, parse_matrix_csv, row_dominance, signed_log10};
use psep::flow::{FlowConfig, FlowModel};
use psep::separation::{gaussian_posterior_oracle, sgld_separate, GaussianPrior, SgldConfig};
use psep::signal::{mu_law_decode_value, mu_law_encode, mu_law_encode_value, SourceKind, MU};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn random_flow(config: FlowConfig, seed: u64, scale: f64) -> FlowModel {
    let mut m = FlowModel::new(config, seed).unwrap();
    m.perturb(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed), scale);
    m
}

fn uniform_frame(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// `ln |det A|` by Gaussian elimination with partial pivoting.
fn log_abs_det(mut a: Vec<Vec<f64>>) -> f64 {
    let n = a.len();
    let mut acc = 0.0;
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, piv);
        let p = a[c][c];
        acc += p.abs().ln();
        for r in c + 1..n {
            let f = a[r][c] / p;
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
        }
    }
    acc
}

fn criterion_1() -> Outcome {
    let configs = [
        FlowConfig { blocks: 1, flows: 2, layers: 2, kernel: 3, width: 4 },
        FlowConfig { blocks: 2, flows: 2, layers: 1, kernel: 3, width: 6 },
        FlowConfig { blocks: 3, flows: 2, layers: 2, kernel: 5, width: 4 },
        FlowConfig { blocks: 2, flows: 4, layers: 3, kernel: 3, width: 8 },
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut inv_err: f64 = 0.0;
    for i in 0..100 {
        let cfg = configs[i % configs.len()];
        let m = random_flow(cfg, i as u64, 0.2);
        let len = cfg.length_multiple() * (1 + i % 8);
        let x = uniform_frame(len, &mut rng);
        let (z, _) = m.forward(&x).unwrap();
        let back = m.inverse(&z).unwrap();
        inv_err = x.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(inv_err, f64::max);
    }
    // log-det against a central-difference Jacobian of the forward map
    let mut ld_err: f64 = 0.0;
    for (i, cfg) in configs[..3].iter().enumerate() {
        let m = random_flow(*cfg, 100 + i as u64, 0.2);
        let x = uniform_frame(8, &mut rng);
        let (_, ld) = m.forward(&x).unwrap();
        let h = 1e-5;
        let mut jac = vec![vec![0.0; 8]; 8];
        for j in 0..8 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let zp = m.forward(&xp).unwrap().0;
            let zm = m.forward(&xm).unwrap().0;
            for (r, (a, b)) in zp.data().iter().zip(zm.data()).enumerate() {
                jac[r][j] = (a - b) / (2.0 * h);
            }
        }
        let brute = log_abs_det(jac);
        ld_err = ld_err.max((ld - brute).abs() / brute.abs().max(1.0));
    }
    // input gradient against central differences of the total log-density
    let mut g_err: f64 = 0.0;
    for (i, cfg) in configs.iter().enumerate() {
        let m = random_flow(*cfg, 200 + i as u64, 0.3);
        let x = uniform_frame(cfg.length_multiple() * 2, &mut rng);
        let (_, g) = m.grad_log_density(&x).unwrap();
        let h = 1e-6;
        for j in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let num = (m.total_log_density(&xp).unwrap() - m.total_log_density(&xm).unwrap()) / (2.0 * h);
            g_err = g_err.max((g[j] - num).abs() / num.abs().max(g[j].abs()).max(1.0));
        }
    }
    let pass = inv_err < 1e-5 && ld_err < 1e-3 && g_err < 1e-4;
    outcome(pass, format!("inverse max err {inv_err:.2e} (<1e-5), log-det rel err {ld_err:.2e} (<1e-3), gradient rel err {g_err:.2e} (<1e-4)"))
}

fn grid_mass(m: &FlowModel, half: f64, n: usize) -> f64 {
    let h = 2.0 * half / n as f64;
    let mut mass = 0.0;
    for i in 0..n {
        for j in 0..n {
            let x = [-half + (i as f64 + 0.5) * h, -half + (j as f64 + 0.5) * h];
            mass += m.total_log_density(&x).unwrap().exp() * h * h;
        }
    }
    mass
}

fn criterion_2() -> Outcome {
    // perturbation kept moderate so the density lives inside the box
    let m = random_flow(FlowConfig { blocks: 1, flows: 3, layers: 1, kernel: 3, width: 4 }, 21, 0.03);
    let n = 240;
    let mass = grid_mass(&m, 3.0, n);
    let wide = grid_mass(&m, 8.0, 2 * n);
    outcome(
        (mass - 1.0).abs() < 0.05,
        format!("mass over [-3,3]^2 = {mass:.4} (1 +/- 0.05, {n}x{n} midpoint grid); over [-8,8]^2 = {wide:.5}"),
    )
}

fn column(t: &Tensor, c: usize) -> Vec<f64> {
    (0..t.rows()).map(|r| t.get(r, c)).collect()
}

fn criterion_3() -> Outcome {
    let mut failures = Vec::new();
    let mut checked = 0;
    let mut finite_short = 0;
    for blocks in 1..=3 {
        for layers in 1..=10 {
            for kernel in [2, 3] {
                let cfg = ArConfig { blocks, layers, kernel, width: 6 };
                let rf = cfg.receptive_field();
                let mut m = ArModel::new(cfg, 7).unwrap();
                m.perturb(&mut ChaCha8Rng::seed_from_u64(11), 0.3);
                let len = rf + 24;
                let mut rng = ChaCha8Rng::seed_from_u64(2);
                let a: Vec<u16> = (0..len).map(|_| rng.random_range(0..256u16)).collect();
                let base = m.logits(&a).unwrap();
                let mut reached = false;
                let mut ok = true;
                for p in [1, 9] {
                    for k in 1..6u16 {
                        let mut b = a.clone();
                        b[p] = (b[p] + 41 * k) % 256;
                        let pert = m.logits(&b).unwrap();
                        let changed: Vec<usize> = (0..len).filter(|&t| column(&base, t) != column(&pert, t)).collect();
                        ok &= changed.iter().all(|&t| t > p && t <= p + rf);
                        reached |= changed.last() == Some(&(p + rf));
                    }
                }
                // infinitesimal probe: exact gradient, immune to rounding
                // of the attenuated far taps
                let t = len - 1;
                let sens = m.input_sensitivity(&a, t).unwrap();
                let support: Vec<usize> = (0..len).filter(|&s| sens[s] != 0.0).collect();
                let exact_support = support.first() == Some(&(t + 1 - rf)) && support.last() == Some(&t) && support.len() == rf;
                if !reached {
                    finite_short += 1;
                }
                reached |= exact_support;
                ok &= support.iter().all(|&s| s + rf > t);
                checked += 1;
                if !ok || !reached {
                    failures.push(format!("{blocks}/{layers}/{kernel}"));
                }
            }
        }
    }
    // zero head: exactly uniform
    let m = ArModel::new(ArConfig::default(), 0).unwrap();
    let frame: Vec<f64> = (0..300).map(|i| 0.9 * (i as f64 * 0.21).sin()).collect();
    let ln256 = 256f64.ln();
    let uniform = m.step_log_probs(&mu_law_encode(&frame).classes).unwrap().iter().all(|&lp| lp == -ln256);
    let pass = failures.is_empty() && uniform;
    outcome(
        pass,
        format!(
            "causality and probed horizon == RF for {}/{checked} configs (blocks 1-3, layers 1-10, kernel 2-3){}; finite probe alone reached RF in {}/{checked}, gradient probe covers the rest; zero-head log-prob == -ln 256 exactly: {uniform}",
            checked - failures.len(),
            if failures.is_empty() { String::new() } else { format!(", failing {failures:?}") },
            checked - finite_short
        ),
    )
}

fn criterion_4() -> Outcome {
    let means = [1.0, 1.5, 1.2, 0.9];
    let vars = [0.5, 0.3, 0.4, 0.6];
    let steps = [(1usize, 0.005), (2, 0.01), (4, 0.02)];
    let len = 256;
    let gamma = 0.1;
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for (n, eta) in steps {
        let priors: Vec<GaussianPrior> = (0..n).map(|k| GaussianPrior::new(means[k], vars[k]).unwrap()).collect();
        let alpha = vec![1.0 / n as f64; n];
        let mut rng = ChaCha8Rng::seed_from_u64(40 + n as u64);
        let mix: Vec<f64> = (0..len)
            .map(|_| {
                let s: f64 = priors
                    .iter()
                    .zip(&alpha)
                    .map(|(p, a)| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        a * (p.mean + p.var.sqrt() * z)
                    })
                    .sum();
                let e: f64 = StandardNormal.sample(&mut rng);
                s + gamma * e
            })
            .collect();
        let exact = gaussian_posterior_oracle(&mix, &priors, &alpha, gamma).unwrap();
        let cfg = SgldConfig { step_size: eta, steps: 20_000, gamma, seed: n as u64, diag_stride: 1000, ..SgldConfig::default() };
        let dm: Vec<&dyn DensityModel> = priors.iter().map(|p| p as &dyn DensityModel).collect();
        let res = sgld_separate(&mix, &dm, &cfg).unwrap();
        let mut errs = Vec::new();
        for k in 0..n {
            let num: f64 = (0..len).map(|t| (res.posterior_mean[k][t] - exact[t].mean[k]).abs()).sum();
            let den: f64 = (0..len).map(|t| exact[t].mean[k].abs()).sum();
            errs.push(num / den);
        }
        let e = errs.iter().cloned().fold(0.0, f64::max);
        worst = worst.max(e);
        parts.push(format!("N={n}: {:.2}%", 100.0 * e));
    }
    outcome(worst < 0.05, format!("worst per-source relative error {} (< 5%, T = 20000, gamma 0.1)", parts.join(", ")))
}

fn criterion_8() -> Outcome {
    // each class covers companded values within half a step of its centre;
    // map those edges back through the expansion to bound the error
    let expand = |y: f64| y.signum() * ((1.0 + MU).powf(y.abs()) - 1.0) / MU;
    let mut bound: f64 = 0.0;
    for c in 0..256u16 {
        let centre = mu_law_decode_value(c).unwrap();
        let lo = expand(((c as f64 - 0.5) / 127.5 - 1.0).max(-1.0));
        let hi = expand(((c as f64 + 0.5) / 127.5 - 1.0).min(1.0));
        bound = bound.max((centre - lo).abs()).max((hi - centre).abs());
    }
    let n = 1_000_000;
    let mut max_err: f64 = 0.0;
    let mut monotone = true;
    let mut prev_class = 0u16;
    let mut prev_val = f64::NEG_INFINITY;
    for i in 0..n {
        let x = -1.0 + 2.0 * i as f64 / (n - 1) as f64;
        let c = mu_law_encode_value(x);
        let v = mu_law_decode_value(c).unwrap();
        monotone &= c >= prev_class && v >= prev_val;
        prev_class = c;
        prev_val = v;
        max_err = max_err.max((x - v).abs());
    }
    let decode_increasing = (0..255u16).all(|c| mu_law_decode_value(c).unwrap() < mu_law_decode_value(c + 1).unwrap());
    let pass = max_err <= bound * (1.0 + 1e-12) && monotone && decode_increasing;
    outcome(pass, format!("max round-trip error {max_err:.6e} <= derived bound {bound:.6e} over 1e6 points; monotone: {}", monotone && decode_increasing))
}

fn cli(args: &[&str]) -> i32 {
    let mut full = vec!["psep"];
    full.extend_from_slice(args);
    psep::cli::main_with_args(full)
}

fn files_under(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn criterion_9() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("tiny.toml");
    std::fs::write(
        &cfg,
        "[data]\nn_train = 16\nn_test = 4\nframe_len = 256\n[train]\ntotal_steps = 100\n[sgld]\nsteps = 1000\ndiag_stride = 10\n",
    )
    .unwrap();
    let mut runs = Vec::new();
    for r in 0..2 {
        let wd = tmp.path().join(format!("run{r}"));
        let w = wd.to_str().unwrap();
        let c = cfg.to_str().unwrap();
        let codes = [
            cli(&["--workdir", w, "--config", c, "gen-data"]),
            cli(&["--workdir", w, "--config", c, "train", "--family", "flow", "--all"]),
            cli(&["--workdir", w, "--config", c, "separate", "--out", "det"]),
        ];
        if codes != [0, 0, 0] {
            return outcome(false, format!("run {r} exit codes {codes:?}"));
        }
        runs.push((files_under(&wd.join("data")), files_under(&wd.join("checkpoints")), files_under(&wd.join("separations"))));
    }
    let (a, b) = (&runs[0], &runs[1]);
    let data = a.0 == b.0 && !a.0.is_empty();
    let cks = a.1 == b.1 && a.1.iter().filter(|(p, _)| p.extension().is_some_and(|e| e == "ck")).count() == 4;
    let sep = a.2 == b.2 && !a.2.is_empty();
    outcome(
        data && cks && sep,
        format!(
            "bitwise identical reruns: gen-data {data} ({} files), train 100 steps {cks} (4 checkpoints), separate 1000 steps {sep} ({} files)",
            a.0.len(),
            a.2.len()
        ),
    )
}

fn criterion_10() -> Outcome {
    let p = RunConfig::paper_scale();
    let ok = p.data.sample_rate == 16000
        && p.data.frame_len == 16384
        && p.data.n_train == 5000
        && p.data.n_test == 1500
        && p.train.total_steps == 150_000
        && p.flow == FlowConfig::paper_toy()
        && p.ar == ArConfig::paper_toy()
        && RunConfig::load(None, true).is_ok();
    outcome(
        ok,
        "out of scope by declaration: musdb18 heatmaps and 150k-step / 16 kHz trainings are not run; the --paper-scale profile resolves (16 kHz, 16384-sample frames, 5000/1500 mixes, 150000 steps) and carries no gate",
    )
}

struct Trained {
    workdir: PathBuf,
    note: String,
}

fn workdir() -> PathBuf {
    std::env::var_os("PSEP_ACCEPTANCE_WORKDIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../target/acceptance-work"))
}

/// Make sure the desk-scale flow priors at sigma 0 and 0.359 exist.
fn ensure_trained() -> Result<Trained, String> {
    let wd = workdir();
    let w = wd.to_str().unwrap().to_string();
    let ck = wd.join("checkpoints");
    let have = |sigma: f64| SourceKind::ALL.iter().all(|&s| find_checkpoint(&ck, ModelFamily::Flow, s, sigma).is_some());
    let mut did = Vec::new();
    if !wd.join("data").join("train").is_dir() {
        if cli(&["--workdir", &w, "gen-data"]) != 0 {
            return Err("gen-data failed".into());
        }
        did.push("generated data");
    }
    if !have(0.0) {
        if cli(&["--workdir", &w, "train", "--family", "flow", "--all"]) != 0 {
            return Err("training failed".into());
        }
        did.push("trained sigma 0 priors");
    }
    if !have(0.359) {
        if cli(&["--workdir", &w, "finetune", "--family", "flow", "--all", "--sigma", "0.359"]) != 0 {
            return Err("fine-tuning failed".into());
        }
        did.push("fine-tuned sigma 0.359 priors");
    }
    let note = if did.is_empty() { "cached priors".to_string() } else { did.join(", ") };
    Ok(Trained { workdir: wd, note })
}

fn read_matrix(t: &Trained, sd: f64, sc: f64) -> Result<Vec<Vec<f64>>, String> {
    let w = t.workdir.to_str().unwrap();
    let (sds, scs) = (sd.to_string(), sc.to_string());
    if cli(&["--workdir", w, "eval-matrix", "--family", "flow", "--data-noise", &sds, "--cond", &scs]) != 0 {
        return Err(format!("eval-matrix sigma_d {sd} sigma_c {sc} failed"));
    }
    let path = t.workdir.join("reports").join(format!("xll_flow_sigma{sd}_cond{sc}.csv"));
    let text = std::fs::read_to_string(&path).map_err(|e| e.to_string())?;
    parse_matrix_csv(&text).map(|(_, v)| v).map_err(|e| e.to_string())
}

fn fmt_row(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(", ")
}

fn criterion_5(t: &Trained, clean: &[Vec<f64>]) -> Outcome {
    let rows = row_dominance(clean);
    let n = rows.iter().filter(|&&r| r).count();
    outcome(n == rows.len(), format!("{n}/4 rows strictly diagonally dominant; diagonal [{}] ({})", fmt_row(&(0..4).map(|i| clean[i][i]).collect::<Vec<_>>()), t.note))
}

fn criterion_6(clean: &[Vec<f64>], noisy: &[Vec<f64>], noisy_clean_data: &[Vec<f64>]) -> Outcome {
    let m0 = discrimination_report(clean).unwrap().margins;
    let m1 = discrimination_report(noisy).unwrap().margins;
    let mc = discrimination_report(noisy_clean_data).unwrap().margins;
    let shrunk = m0.iter().zip(&m1).filter(|(a, b)| b < a).count();
    outcome(
        shrunk >= 3,
        format!(
            "margins shrink for {shrunk}/4 priors (need >= 3): sigma 0 [{}] -> sigma 0.359 on sigma_d 0.359 data [{}]; sigma 0.359 priors on clean data [{}]",
            fmt_row(&m0),
            fmt_row(&m1),
            fmt_row(&mc)
        ),
    )
}

fn criterion_7(t: &Trained, clean: &[Vec<f64>]) -> Outcome {
    let w = t.workdir.to_str().unwrap();
    if cli(&["--workdir", w, "eval-degenerate", "--family", "flow", "--sigma", "0.359"]) != 0 {
        return outcome(false, "eval-degenerate failed");
    }
    let text = std::fs::read_to_string(t.workdir.join("reports/degenerate_flow.csv")).unwrap();
    let mut rows = std::collections::HashMap::new();
    for line in text.lines().skip(1) {
        // input name is quoted and may hold commas; parse from the right
        let mut f: Vec<&str> = line.rsplitn(6, ',').collect();
        f.reverse();
        let vals: Vec<f64> = f[2..].iter().map(|v| v.parse().unwrap()).collect();
        rows.insert((f[0].trim_matches('"').to_string(), f[1].to_string()), vals);
    }
    let get = |input: &str, sigma: &str| rows[&(input.to_string(), sigma.to_string())].clone();
    let c0 = get("constant-0", "0");
    let n0 = get("noise-N(0,0.5)", "0");
    let n1 = get("noise-N(0,0.5)", "0.359");
    let s = signed_log10;
    let inclass: Vec<f64> = (0..4).map(|i| clean[i][i]).collect();
    // sine, saw, square, triangle
    let near = [0, 1, 3].iter().all(|&i| (s(c0[i]) - s(inclass[i])).abs() <= 2.0);
    let square_low = s(inclass[2]) - s(c0[2]) >= 2.0;
    let noise_low = (0..4).all(|i| s(inclass[i]) - s(n0[i]) >= 4.0);
    let noise_rise = [0, 1].iter().all(|&i| s(n1[i]) - s(n0[i]) >= 4.0);
    outcome(
        near && square_low && noise_low && noise_rise,
        format!(
            "in-class [{}]; constant-0 [{}]; noise sigma0 [{}]; noise sigma0.359 [{}]; constant within 2 orders (sine/saw/tri) {near}, square >= 2 orders lower {square_low}, noise >= 4 orders below in-class {noise_low}, noise rises >= 4 orders (sine/saw) {noise_rise}",
            fmt_sci(&inclass),
            fmt_sci(&c0),
            fmt_sci(&n0),
            fmt_sci(&n1)
        ),
    )
}

fn fmt_sci(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.2e}")).collect::<Vec<_>>().join(", ")
}

fn selected(n: usize) -> bool {
    match std::env::var("PSEP_ACCEPTANCE_ONLY") {
        Ok(list) => list.split(',').any(|v| v.trim().parse() == Ok(n)),
        Err(_) => true,
    }
}

fn report(n: usize, name: &str, limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> bool {
    if !selected(n) {
        println!("criterion {n} [{name}]: SKIPPED (not selected)");
        return true;
    }
    let t = Instant::now();
    let o = f();
    let el = t.elapsed();
    let in_time = limit.is_none_or(|l| el <= l);
    let pass = o.pass && in_time;
    let budget = limit.map(|l| format!(", budget {}s", l.as_secs())).unwrap_or_default();
    println!(
        "criterion {n} [{name}]: {} : {}{} [{:.1}s{budget}]",
        if pass { "PASS" } else { "FAIL" },
        o.detail,
        if in_time { "" } else { " (over time budget)" },
        el.as_secs_f64()
    );
    pass
}

fn main() {
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let minute = Duration::from_secs(60);
    let mut all = true;
    all &= report(1, "flow correctness", Some(minute), criterion_1);
    all &= report(2, "density normalization", Some(minute), criterion_2);
    all &= report(3, "AR correctness", Some(minute), criterion_3);
    all &= report(4, "SGLD Gaussian oracle", Some(5 * minute), criterion_4);
    let trained = if [5, 6, 7].iter().any(|&n| selected(n)) { ensure_trained() } else { Err("not selected".into()) };
    match trained {
        Ok(t) => {
            let mats = (|| -> Result<_, String> { Ok((read_matrix(&t, 0.0, 0.0)?, read_matrix(&t, 0.359, 0.359)?, read_matrix(&t, 0.0, 0.359)?)) })();
            match mats {
                Ok((clean, noisy, noisy_clean)) => {
                    all &= report(5, "toy discrimination", None, || criterion_5(&t, &clean));
                    all &= report(6, "noise-conditioning degradation", None, || criterion_6(&clean, &noisy, &noisy_clean));
                    all &= report(7, "constant and noise inputs", None, || criterion_7(&t, &clean));
                }
                Err(e) => {
                    for (n, name) in [(5, "toy discrimination"), (6, "noise-conditioning degradation"), (7, "constant and noise inputs")] {
                        all &= report(n, name, None, || outcome(false, e.clone()));
                    }
                }
            }
        }
        Err(e) => {
            for (n, name) in [(5, "toy discrimination"), (6, "noise-conditioning degradation"), (7, "constant and noise inputs")] {
                all &= report(n, name, None, || outcome(false, e.clone()));
            }
        }
    }
    all &= report(8, "mu-law companding", None, criterion_8);
    all &= report(9, "determinism", None, criterion_9);
    all &= report(10, "declared non-reproduction", None, criterion_10);
    println!("acceptance: {}", if all { "all criteria pass" } else { "some criteria fail" });
    if !all {
        std::process::exit(1);
    }
}
