//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use raresir_core::ldp::{relative_entropy, DiscreteMeasure};
use raresir_core::rare::{estimate_mean, run_tail_phase, CampaignConfig};
use raresir_core::scenario::{calibrated_tau, generate_synthetic, load_pathloss_grid, Scenario, SyntheticSpec};
use raresir_core::sir::{limit_disconnected_mass, threshold_lambda};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::gamma::gamma_ur;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn raresir(dir: &Path, args: &[&str]) -> Output {
    let o = Command::new(env!("CARGO_BIN_EXE_raresir"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs");
    if !o.status.success() {
        eprintln!("raresir {args:?} exited {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr));
    }
    o
}

fn read_csv(path: &Path) -> Vec<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let mut lines = text.lines();
    let header: Vec<String> = lines.next().unwrap().split(',').map(str::to_string).collect();
    lines
        .map(|l| header.iter().cloned().zip(l.split(',').map(str::to_string)).collect())
        .collect()
}

fn num(row: &BTreeMap<String, String>, key: &str) -> f64 {
    row[key].parse().unwrap_or_else(|_| panic!("column {key} = '{}'", row[key]))
}

fn manifest_value(path: &Path, key: &str) -> Option<String> {
    std::fs::read_to_string(path)
        .ok()?
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")).map(str::to_string))
}

fn stdout_value(o: &Output, prefix: &str) -> Option<f64> {
    String::from_utf8_lossy(&o.stdout)
        .lines()
        .find_map(|l| l.strip_prefix(prefix))
        .and_then(|v| v.trim().parse().ok())
}

// ---------------------------------------------------------------- 1

fn threshold_identities() -> Verdict {
    let cases = [(-50.0, 2f64.powi(-12), -13.88, 0.005), (-60.0, 0.001, -30.0, 1e-9), (-60.0, 0.01, -40.0, 1e-9)];
    let mut ok = true;
    let mut detail = Vec::new();
    for (tau, lambda, want, tol) in cases {
        let got = threshold_lambda(tau, lambda).unwrap().tau_lambda_db;
        ok &= (got - want).abs() <= tol;
        detail.push(format!("{got:.4}"));
    }
    verdict(ok, format!("tau_lambda dB = {}", detail.join(", ")))
}

// ---------------------------------------------------------------- 2

const ORACLE_SIZES: &str = "50,100,150,200,250,300,350,400";
const ORACLE_MAX_REPS: &str = "2000000";

/// Least-squares slope of `ln p` against `n`, negated.
fn slope_rate(n: &[f64], lp: &[f64]) -> f64 {
    let k = n.len() as f64;
    let (mx, my) = (n.iter().sum::<f64>() / k, lp.iter().sum::<f64>() / k);
    let sxy: f64 = n.iter().zip(lp).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = n.iter().map(|x| (x - mx).powi(2)).sum();
    -sxy / sxx
}

fn oracle_case(dir: &Path, label: &str, args: &[&str], analytic: f64, exact_tail: impl Fn(f64) -> f64) -> (bool, String) {
    let out = format!("{label}.csv");
    let mut full = vec!["oracle"];
    full.extend_from_slice(args);
    full.extend_from_slice(&[
        "--n-list", ORACLE_SIZES, "--target-rel-se", "0.1", "--max-reps", ORACLE_MAX_REPS, "--seed", "2", "--out", &out,
    ]);
    let o = raresir(dir, &full);
    let rows = read_csv(&dir.join(&out));
    let resolved: Vec<&BTreeMap<String, String>> = rows
        .iter()
        .filter(|r| num(r, "p_hat") > 0.0 && num(r, "std_err") < 0.1 * num(r, "p_hat"))
        .collect();
    let printed = stdout_value(&o, "analytic rate: ").unwrap_or(f64::NAN);
    let est = stdout_value(&o, "estimated rate: ");
    let rel = est.map(|e| ((e - analytic) / analytic).abs());
    let ok = resolved.len() == rows.len() && rel.is_some_and(|r| r <= 0.15) && (printed - analytic).abs() < 1e-12;

    // Exact tails over the same sizes isolate estimator bias from sampling cost.
    let ns: Vec<f64> = rows.iter().map(|r| num(r, "n")).collect();
    let lp: Vec<f64> = ns.iter().map(|&n| exact_tail(n).ln()).collect();
    let exact_rate = slope_rate(&ns, &lp);
    let hardest = exact_tail(*ns.last().unwrap());
    let detail = format!(
        "{label}: {}/{} sizes reach std err < 10% of p_hat (cap {ORACLE_MAX_REPS} reps); estimated rate {} vs {analytic:.5} \
         (rel err {}); exact-tail fit over the same sizes gives {exact_rate:.5} ({:.1}%); p at n=400 is {hardest:.2e}",
        resolved.len(),
        rows.len(),
        est.map_or("n/a".into(), |e| format!("{e:.5}")),
        rel.map_or("n/a".into(), |r| format!("{:.1}%", 100.0 * r)),
        100.0 * ((exact_rate - analytic) / analytic).abs(),
    );
    (ok, detail)
}

fn ldp_oracle_closure(dir: &Path) -> Verdict {
    // Exact oracles: S_n of Exp(1) is Gamma(n, 1)/n; S_n of N(0,1) is N(0, 1/n).
    let (ok_e, d_e) = oracle_case(dir, "exp", &["--dist", "exp", "--m", "1", "--s", "1.5"], 0.5 - 1.5f64.ln(), |n| {
        gamma_ur(n, 1.5 * n)
    });
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    let (ok_g, d_g) = oracle_case(dir, "gauss", &["--dist", "gauss", "--m", "0", "--sigma", "1", "--s", "0.5"], 0.125, |n| {
        std_normal.sf(0.5 * n.sqrt())
    });
    verdict(ok_e && ok_g, format!("{d_e}\n      {d_g}"))
}

// ---------------------------------------------------------------- 3 and 7

const BF_LAMBDA: f64 = 0.15;
const BF_TAU_DB: f64 = -12.8;
const BF_EPS: f64 = 0.5;
const BF_CAP: u32 = 8;
const BF_REPS: u64 = 100_000;

const BF_GRID: &str = "ncols 3
nrows 3
xllcorner 0
yllcorner 0
cellsize 1
nodata_value -9999
0 -2 -9999
-5 -1 -8
-9999 -12 -9999
";

struct Enumeration {
    free: Vec<usize>,
    mean_l: f64,
    b: f64,
    p_tail: f64,
    cond_mean: Vec<f64>,
    truncated_mass: f64,
    atom_gap: f64,
}

/// Exact law of L by enumerating every count vector with counts <= 8.
/// Written against the model definition only: a user on tile t is cut off
/// when ell_t < (tau / lambda) * sum_s N_s ell_s.
fn enumerate(db: &[Option<f64>]) -> Enumeration {
    let free: Vec<usize> = (0..db.len()).filter(|&t| db[t].is_some()).collect();
    let ell: Vec<f64> = free.iter().map(|&t| 10f64.powf(db[t].unwrap() / 10.0)).collect();
    let m = BF_LAMBDA; // unit tiles
    let pmf: Vec<f64> = (0..=BF_CAP)
        .scan(1.0, |fact, j| {
            if j > 0 {
                *fact *= f64::from(j);
            }
            Some((-m).exp() * m.powi(j as i32) / *fact)
        })
        .collect();
    let kept: f64 = pmf.iter().sum();
    let truncated_mass = 1.0 - kept.powi(free.len() as i32);
    let tau_lambda = 10f64.powf(BF_TAU_DB / 10.0) / BF_LAMBDA;

    let k = free.len();
    let base = (BF_CAP + 1) as usize;
    let total = base.pow(k as u32);
    let mut table = Vec::with_capacity(total);
    let mut counts = vec![0u32; k];
    for code in 0..total {
        let mut c = code;
        for slot in counts.iter_mut() {
            *slot = (c % base) as u32;
            c /= base;
        }
        let prob: f64 = counts.iter().map(|&c| pmf[c as usize]).product();
        let received: f64 = counts.iter().zip(&ell).map(|(&c, &l)| f64::from(c) * l).sum();
        let cut: u32 = counts
            .iter()
            .zip(&ell)
            .filter(|(_, &l)| l < tau_lambda * received)
            .map(|(&c, _)| c)
            .sum();
        table.push((f64::from(cut) / BF_LAMBDA, prob, counts.clone()));
    }
    let mean_l: f64 = table.iter().map(|(l, p, _)| l * p).sum();
    let b = mean_l * (1.0 + BF_EPS);
    let mut p_tail = 0.0;
    let mut cond = vec![0.0; k];
    for (l, p, c) in &table {
        if *l > b {
            p_tail += p;
            for (acc, &n) in cond.iter_mut().zip(c) {
                *acc += p * f64::from(n);
            }
        }
    }
    let cond_mean = cond.iter().map(|x| x / p_tail).collect();
    // L only takes values j / lambda; b must not sit on one.
    let atom_gap = (0..=(BF_CAP * k as u32))
        .map(|j| (f64::from(j) / BF_LAMBDA - b).abs())
        .fold(f64::INFINITY, f64::min);
    Enumeration { free, mean_l, b, p_tail, cond_mean, truncated_mass, atom_gap }
}

struct BruteForce {
    c3: Verdict,
    c7: Verdict,
}

fn brute_force(dir: &Path) -> BruteForce {
    let path = dir.join("bf.pathloss.asc");
    std::fs::write(&path, BF_GRID).unwrap();
    let grid = load_pathloss_grid::<f64, _>(std::io::BufReader::new(std::fs::File::open(&path).unwrap())).unwrap();
    let ex = enumerate(&grid.values_db);
    let sc = Scenario::new("bf", grid, None).unwrap();

    let cfg = CampaignConfig {
        lambda: BF_LAMBDA,
        tau_db: BF_TAU_DB,
        eps: BF_EPS,
        n_mean: BF_REPS,
        n_tail: BF_REPS,
        master_seed: 3,
    };
    let mean = estimate_mean(&sc, &cfg).unwrap();
    let phase = run_tail_phase(&sc, &cfg, ex.b, true, false).unwrap();
    let tail = phase.tail;
    let heat = phase.heatmap.unwrap();

    let z_mean = (mean.mean - ex.mean_l) / mean.std_err;
    let se_tail = (ex.p_tail * (1.0 - ex.p_tail) / tail.n as f64).sqrt();
    let z_tail = (tail.p_hat - ex.p_tail) / se_tail;
    let se_cells = heat.std_err_counts();
    let z_cells: Vec<f64> = ex
        .free
        .iter()
        .zip(&ex.cond_mean)
        .map(|(&t, &want)| (heat.mean_counts[t] - want) / se_cells[t])
        .collect();
    let worst_cell = z_cells.iter().fold(0.0f64, |a, z| a.max(z.abs()));
    let setup_ok = ex.truncated_mass < 1e-12 && ex.atom_gap > 1e-6 && ex.free.len() <= 9;
    let cells_ok = z_cells.iter().all(|z| z.is_finite() && z.abs() <= 4.0);

    let c3 = verdict(
        setup_ok && z_mean.abs() <= 4.0 && z_tail.abs() <= 4.0 && cells_ok,
        format!(
            "{} free tiles, truncated mass {:.1e}; E[L] exact {:.5} vs MC {:.5} (z {z_mean:+.2}); \
             P(L > {:.4}) exact {:.5} vs MC {:.5} (z {z_tail:+.2}); conditional means worst |z| {worst_cell:.2}",
            ex.free.len(),
            ex.truncated_mass,
            ex.mean_l,
            mean.mean,
            ex.b,
            ex.p_tail,
            tail.p_hat
        ),
    );

    let blocked: Vec<usize> = (0..sc.geometry().n_tiles()).filter(|&t| sc.is_blocked(t)).collect();
    let blocked_zero = blocked
        .iter()
        .all(|&t| heat.sum_counts[t] == 0 && heat.mean_counts[t] == 0.0 && heat.ratio[t].is_none());
    let unconditional = BF_LAMBDA * ex.free.len() as f64;
    let exact_cond_mass: f64 = ex.cond_mean.iter().sum();
    let mass = heat.total_mean_mass();
    let c7 = verdict(
        cells_ok && mass > unconditional && blocked_zero,
        format!(
            "{} atypical replicates; per-tile worst |z| {worst_cell:.2}; conditional mass {mass:.4} \
             (exact {exact_cond_mass:.4}) > unconditional {unconditional:.4}; {} blocked tiles exactly zero: {blocked_zero}",
            heat.n_atypical,
            blocked.len()
        ),
    );
    BruteForce { c3, c7 }
}

// ---------------------------------------------------------------- 4

const LLN_SIDE: usize = 32;
const LLN_ALPHA: f64 = 1.0;

/// Deterministic limit: area of tiles whose path loss falls below
/// tau * (mean-field received power), computed from geometry alone.
fn lln_limit(tau: f64) -> f64 {
    let c = LLN_SIDE as f64 / 2.0;
    let ell: Vec<f64> = (0..LLN_SIDE * LLN_SIDE)
        .map(|i| {
            let (x, y) = ((i % LLN_SIDE) as f64 + 0.5, (i / LLN_SIDE) as f64 + 0.5);
            let s = ((x - c).powi(2) + (y - c).powi(2)).sqrt();
            s.powf(-LLN_ALPHA).min(1.0)
        })
        .collect();
    let field: f64 = ell.iter().sum();
    ell.iter().filter(|&&l| l < tau * field).count() as f64
}

fn law_of_large_numbers() -> Verdict {
    let sc = generate_synthetic(&SyntheticSpec::open(LLN_SIDE, LLN_SIDE, 1.0, LLN_ALPHA)).unwrap();
    let tau = calibrated_tau(&sc.intensity).unwrap().value();
    let limit = lln_limit(tau);
    let scan = limit_disconnected_mass(&sc, tau);
    let cfg = CampaignConfig {
        lambda: 0.5,
        tau_db: 10.0 * tau.log10(),
        eps: 0.02,
        n_mean: 10_000,
        n_tail: 1,
        master_seed: 4,
    };
    let m = estimate_mean(&sc, &cfg).unwrap();
    let z = (m.mean - limit) / m.std_err;
    verdict(
        z.abs() <= 3.0 && (scan - limit).abs() < 1e-9,
        format!(
            "{LLN_SIDE}x{LLN_SIDE} open grid, alpha {LLN_ALPHA}, lambda 0.5, {} replicates: mean {:.3} (se {:.3}) vs limit {limit} \
             (tile scan {scan}), z {z:+.2}",
            m.n, m.mean, m.std_err
        ),
    )
}

// ---------------------------------------------------------------- 5 and 6

fn decay_scenario(dir: &Path) {
    let o = raresir(dir, &["scenario", "gen", "--cols", "100", "--rows", "100", "--cell", "1", "--alpha", "2", "--name", "decay"]);
    assert!(o.status.success());
}

fn exponential_decay(dir: &Path) -> Verdict {
    let o = raresir(
        dir,
        &["sweep", "--scenario", "decay.pathloss.asc", "--lambdas", "0.2,0.4,0.6,0.8,1.0", "--eps", "0.02", "--auto-n",
          "--seed", "5", "--out", "decay_sweep.csv"],
    );
    if !o.status.success() {
        return verdict(false, "sweep failed");
    }
    let rows = read_csv(&dir.join("decay_sweep.csv"));
    let log_p: Vec<f64> = rows.iter().map(|r| r["log_p"].parse().unwrap_or(f64::NEG_INFINITY)).collect();
    let decreasing = log_p.windows(2).all(|w| w[1] < w[0]);
    let r2: f64 = manifest_value(&dir.join("decay_sweep.csv.manifest"), "fit.r_squared")
        .and_then(|v| v.parse().ok())
        .unwrap_or(f64::NAN);
    let shown: Vec<String> = log_p.iter().map(|v| format!("{v:.3}")).collect();
    verdict(
        decreasing && r2 > 0.9,
        format!("100x100 open grid, alpha 2: log p_hat = [{}], strictly decreasing: {decreasing}, R^2 {r2:.4}", shown.join(", ")),
    )
}

fn spread_at(dir: &Path, lambda: &str) -> Option<(f64, f64)> {
    let out = format!("ext_{lambda}");
    let o = raresir(
        dir,
        &["extremes", "--scenario", "decay.pathloss.asc", "--lambda", lambda, "--n", "10000", "--seed", "6", "--out", &out],
    );
    if !o.status.success() {
        return None;
    }
    let rows = read_csv(&dir.join(format!("{out}.csv")));
    let frac = |w: &str| rows.iter().find(|r| r["which"] == w).map(|r| num(r, "connected_fraction"));
    Some((frac("least")?, frac("most")?))
}

fn extremes_contraction(dir: &Path) -> Verdict {
    match (spread_at(dir, "0.001"), spread_at(dir, "0.01")) {
        (Some((l1, m1)), Some((l2, m2))) => verdict(
            m2 - l2 < m1 - l1,
            format!(
                "lambda 0.001: least {:.2}%, most {:.2}% (spread {:.4}); lambda 0.01: least {:.2}%, most {:.2}% (spread {:.4})",
                100.0 * l1, 100.0 * m1, m1 - l1, 100.0 * l2, 100.0 * m2, m2 - l2
            ),
        ),
        _ => verdict(false, "extremes run failed"),
    }
}

// ---------------------------------------------------------------- 8

fn campaign_outputs(dir: &Path, threads: &str) -> Vec<PathBuf> {
    std::fs::create_dir_all(dir).unwrap();
    let gen = raresir(
        dir,
        &["scenario", "gen", "--cols", "30", "--rows", "24", "--alpha", "2.5", "--obstacle", "3,3,12,9", "--name", "det"],
    );
    assert!(gen.status.success());
    let input = ["--scenario", "det.pathloss.asc", "--mask", "det.mask.asc", "--seed", "8", "--threads", threads];
    let runs: [&[&str]; 4] = [
        &["simulate", "--lambda", "0.3", "--eps", "0.05", "--n-mean", "2000", "--n-tail", "3000", "--out", "sim.csv"],
        &["sweep", "--lambdas", "0.2,0.5,1", "--eps", "0.05", "--n-mean", "1000", "--n-tail", "2000", "--out", "sweep.csv"],
        &["heatmap", "--lambda", "0.3", "--eps", "0.05", "--n-mean", "1000", "--n", "3000", "--out", "hm"],
        &["extremes", "--lambda", "0.05", "--n", "3000", "--out", "ext"],
    ];
    for r in runs {
        let mut args = r.to_vec();
        args.extend_from_slice(&input);
        assert!(raresir(dir, &args).status.success(), "{args:?}");
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("csv" | "asc")))
        .collect();
    files.sort();
    files
}

fn determinism(dir: &Path) -> Verdict {
    let a = campaign_outputs(&dir.join("t1"), "1");
    let b = campaign_outputs(&dir.join("t8"), "8");
    let c = campaign_outputs(&dir.join("t1_again"), "1");
    let names = |v: &[PathBuf]| v.iter().map(|p| p.file_name().unwrap().to_owned()).collect::<Vec<_>>();
    let mut mismatched = Vec::new();
    if names(&a) != names(&b) || names(&a) != names(&c) {
        return verdict(false, "different output file sets");
    }
    for ((pa, pb), pc) in a.iter().zip(&b).zip(&c) {
        let ba = std::fs::read(pa).unwrap();
        if ba != std::fs::read(pb).unwrap() || ba != std::fs::read(pc).unwrap() {
            mismatched.push(pa.file_name().unwrap().to_string_lossy().into_owned());
        }
    }
    verdict(
        mismatched.is_empty(),
        format!("{} CSV/.asc files compared across --threads 1, --threads 8 and a repeat; mismatches: {:?}", a.len(), mismatched),
    )
}

// ---------------------------------------------------------------- 9

fn entropy_sanity() -> Verdict {
    let sc = generate_synthetic(
        &SyntheticSpec::open(12, 9, 1.5, 2.0).with_obstacle(raresir_core::Rect { x0: 0.0, y0: 0.0, x1: 6.0, y1: 4.5 }),
    )
    .unwrap();
    let mu = DiscreteMeasure::from_intensity(&sc.intensity, 0.7).unwrap();
    let total: f64 = mu.weights.iter().sum();
    let same = relative_entropy(&mu, &mu).unwrap();
    let doubled = relative_entropy(&mu.scaled(2.0).unwrap(), &mu).unwrap();
    let want = total * (2.0 * 2f64.ln() - 1.0);
    let rel = ((doubled - want) / want).abs();
    let blocked = (0..sc.geometry().n_tiles()).find(|&t| sc.is_blocked(t)).unwrap();
    let mut w = mu.weights.clone();
    w[blocked] = 0.25;
    let off = relative_entropy(&DiscreteMeasure::new(mu.geometry, w).unwrap(), &mu).unwrap();
    verdict(
        same == 0.0 && rel <= 1e-12 && off == f64::INFINITY,
        format!("h(mu|mu) = {same}; h(2mu|mu) = {doubled:.15} vs M(2 ln 2 - 1) = {want:.15} (rel {rel:.1e}); charged null tile -> {off}"),
    )
}

// ----------------------------------------------------------------

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    decay_scenario(d);

    let mut report: Vec<(u32, &str, Verdict, f64)> = Vec::new();
    let mut timed = |n: u32, name: &'static str, f: &mut dyn FnMut() -> Verdict| {
        let t = Instant::now();
        let v = f();
        let secs = t.elapsed().as_secs_f64();
        println!("criterion {n} [{name}]: {} ({secs:.1}s)\n      {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        report.push((n, name, v, secs));
    };

    timed(1, "threshold identities", &mut threshold_identities);
    timed(2, "LDP oracle closure", &mut || ldp_oracle_closure(d));
    let mut bf = None;
    timed(3, "small-instance brute force", &mut || {
        let r = brute_force(d);
        let v = verdict(r.c3.pass, r.c3.detail.clone());
        bf = Some(r);
        v
    });
    timed(4, "law of large numbers", &mut law_of_large_numbers);
    timed(5, "exponential decay direction", &mut || exponential_decay(d));
    timed(6, "extremes contraction", &mut || extremes_contraction(d));
    timed(7, "conditional heat map structure", &mut || bf.take().expect("criterion 3 ran").c7);
    timed(8, "determinism", &mut || determinism(d));
    timed(9, "entropy sanity", &mut entropy_sanity);

    let passed = report.iter().filter(|r| r.2.pass).count();
    println!("acceptance: {passed}/{} criteria passed", report.len());
    if passed != report.len() {
        std::process::exit(1);
    }
}
