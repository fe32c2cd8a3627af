//! Acceptance suite. Runs every criterion and prints one PASS/FAIL line each;
//! exits non-zero if any criterion fails.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use surrmeta::data::Design;
use surrmeta::equivalence::{bh_adjust, tost_p};
use surrmeta::meta::{estimate_tau2_reml, pool_effects, restricted_log_likelihood, MetaInput, MetaModel, PoolOptions};
use surrmeta::metrics::{bca_bootstrap_ci, ccc, icc21, EffectPairs, Statistic};
use surrmeta::pipeline::{screen, EpsilonPolicy, ScreenOptions};
use surrmeta::rank::{estimate_paired, estimate_two_arm};
use surrmeta::signature::{evaluate_signature, EvaluateOptions};
use surrmeta::sim::{
    run_calibration, run_permutation_fpr, run_power, synthetic_studies, MuRegime, PermutationConfig,
    SampleSizes, SimConfig, SimRow, SyntheticConfig,
};

const J: usize = 20_000;
const ALPHAS: [f64; 4] = [0.01, 0.025, 0.05, 0.1];

struct Outcome {
    pass: bool,
    detail: String,
}

fn sim(m: usize, n: usize, eps: f64, u_tau2: f64, u_nu: f64, regime: MuRegime, model: MetaModel, seed: u64) -> SimConfig {
    SimConfig {
        j: J,
        m,
        n: SampleSizes::Common(n),
        epsilon: eps,
        alpha: 0.05,
        u_tau2_max: u_tau2,
        u_nu_max: u_nu,
        mu_regime: regime,
        model,
        seed,
    }
}

fn bound(alpha: f64, j: usize) -> f64 {
    alpha + 2.0 * (alpha * (1.0 - alpha) / j as f64).sqrt()
}

/// Largest excess of the empirical rate over the allowed bound, and the row where it occurs.
fn worst(rows: &[SimRow]) -> (f64, String) {
    rows.iter()
        .map(|r| {
            (
                r.rate - bound(r.alpha, r.j),
                format!("M={} n={} u_tau2={} u_nu={} alpha={} rate={:.4}", r.m, r.n, r.u_tau2_max, r.u_nu_max, r.alpha, r.rate),
            )
        })
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .unwrap()
}

fn criterion_1() -> Outcome {
    let eps = 0.1;
    let mut rows = Vec::new();
    for (k, &m) in [3, 10, 25].iter().enumerate() {
        for (l, &n) in [10, 50, 250].iter().enumerate() {
            let cfg = sim(m, n, eps, eps / 10.0, 100.0 * eps, MuRegime::Lfc, MetaModel::RE_HKSJ, 100 + (3 * k + l) as u64);
            rows.extend(run_calibration(&cfg, &ALPHAS).unwrap());
        }
    }
    let (excess, at) = worst(&rows);
    Outcome {
        pass: excess <= 0.0,
        detail: format!("{} cells x 4 alphas; worst margin to bound {excess:+.4} at {at}", rows.len() / 4),
    }
}

fn heterogeneity_grid(model: MetaModel) -> Vec<SimRow> {
    let eps = 0.1;
    let n = 10;
    let mut rows = Vec::new();
    for (k, &ut) in [eps / 10.0, eps, 10.0 * eps].iter().enumerate() {
        for (l, &un_per_n) in [eps / 10.0, eps, 10.0 * eps].iter().enumerate() {
            let cfg = sim(10, n, eps, ut, un_per_n * n as f64, MuRegime::Lfc, model, 200 + (3 * k + l) as u64);
            rows.extend(run_calibration(&cfg, &ALPHAS).unwrap());
        }
    }
    rows
}

fn criterion_2(re: &[SimRow]) -> Outcome {
    let (excess, at) = worst(re);
    Outcome {
        pass: excess <= 0.0,
        detail: format!("RE-HKSJ, 9 cells x 4 alphas; worst margin to bound {excess:+.4} at {at}"),
    }
}

fn criterion_3() -> Outcome {
    let eps = 0.1;
    let levels = [eps / 100.0, eps / 10.0, eps, 10.0 * eps, 100.0 * eps];
    let ms = [3, 10, 25];
    let mut power = vec![vec![(0.0, 0.0); ms.len()]; levels.len()];
    for (a, &u) in levels.iter().enumerate() {
        for (b, &m) in ms.iter().enumerate() {
            let cfg = sim(m, 50, eps, u, u, MuRegime::UniformValid, MetaModel::RE_HKSJ, 300 + (10 * a + b) as u64);
            let r = run_power(&cfg).unwrap();
            power[a][b] = (r.rate, r.mc_se);
        }
    }
    let high = power[0][2].0;
    let low = power[4][2].0;
    let mut monotone = true;
    let mut worst_drop = f64::NEG_INFINITY;
    for row in &power {
        for w in row.windows(2) {
            let ((p0, s0), (p1, s1)) = (w[0], w[1]);
            let drop = p0 - p1 - 2.0 * (s0 * s0 + s1 * s1).sqrt();
            worst_drop = worst_drop.max(drop);
            monotone &= drop <= 0.0;
        }
    }
    Outcome {
        pass: high >= 0.9 && low <= 0.01 && monotone,
        detail: format!(
            "power(M=25,u=eps/100)={high:.4} (>=0.9), power(M=25,u=100eps)={low:.4} (<=0.01), monotone in M within 2 MC-SE: {monotone} (worst slack {worst_drop:+.4})"
        ),
    }
}

fn criterion_4(re: &[SimRow]) -> Outcome {
    let fe = heterogeneity_grid(MetaModel::FE);
    let fe_exceed: Vec<&SimRow> = fe.iter().filter(|r| r.rate > bound(r.alpha, r.j)).collect();
    let re_exceed = re.iter().filter(|r| r.rate > bound(r.alpha, r.j)).count();
    let example = fe_exceed
        .iter()
        .max_by(|a, b| a.rate.total_cmp(&b.rate))
        .map(|r| format!("u_tau2={} u_nu={} alpha={} FE rate={:.4}", r.u_tau2_max, r.u_nu_max, r.alpha, r.rate))
        .unwrap_or_default();
    Outcome {
        pass: !fe_exceed.is_empty() && re_exceed == 0,
        detail: format!(
            "FE exceeds bound in {} of {} (cell, alpha) pairs, e.g. {example}; RE-HKSJ exceeds in {re_exceed}",
            fe_exceed.len(),
            fe.len()
        ),
    }
}

/// Doubled comparison, as an integer: 2, 1 or 0.
fn g2(x: f64, y: f64) -> i128 {
    if x > y {
        2
    } else if x == y {
        1
    } else {
        0
    }
}

/// Sample variance (divisor n - 1) of `v / scale`, divided by `n`, as an exact
/// rational (numerator, denominator).
fn var_of_mean(v: &[i128], scale: i128) -> (i128, i128) {
    let n = v.len() as i128;
    // sum over i of (n v_i - sum v)^2 / n^2 / (n - 1) / scale^2 / n
    let total: i128 = v.iter().sum();
    let ss: i128 = v.iter().map(|&x| (n * x - total).pow(2)).sum();
    (ss, n * n * (n - 1) * scale * scale * n)
}

fn add(a: (i128, i128), b: (i128, i128)) -> (i128, i128) {
    (a.0 * b.1 + b.0 * a.1, a.1 * b.1)
}

fn to_f64((num, den): (i128, i128)) -> f64 {
    // reduce so both parts are exactly representable
    fn gcd(a: i128, b: i128) -> i128 {
        if b == 0 {
            a.abs()
        } else {
            gcd(b, a % b)
        }
    }
    let g = gcd(num, den).max(1);
    (num / g) as f64 / (den / g) as f64
}

fn brute_paired(y0: &[f64], y1: &[f64], s0: &[f64], s1: &[f64]) -> (f64, f64, f64, f64) {
    let n = y0.len();
    let mut gy = 0.0;
    let mut gs = 0.0;
    let mut d = Vec::new();
    for i in 0..n {
        gy += g2(y1[i], y0[i]) as f64 / 2.0;
        gs += g2(s1[i], s0[i]) as f64 / 2.0;
        d.push(g2(y1[i], y0[i]) - g2(s1[i], s0[i]));
    }
    let u_y = gy / n as f64;
    let u_s = gs / n as f64;
    (u_y, u_s, u_y - u_s, to_f64(var_of_mean(&d, 2)))
}

fn brute_two_arm(y_t: &[f64], s_t: &[f64], y_c: &[f64], s_c: &[f64]) -> (f64, f64, f64, f64) {
    let (n1, n0) = (y_t.len(), y_c.len());
    let mut gy = 0.0;
    let mut gs = 0.0;
    let mut p = vec![0i128; n1];
    let mut q = vec![0i128; n0];
    for i in 0..n1 {
        for l in 0..n0 {
            gy += g2(y_t[i], y_c[l]) as f64 / 2.0;
            gs += g2(s_t[i], s_c[l]) as f64 / 2.0;
            let d = g2(y_t[i], y_c[l]) - g2(s_t[i], s_c[l]);
            p[i] += d;
            q[l] += d;
        }
    }
    let total = (n1 * n0) as f64;
    let u_y = gy / total;
    let u_s = gs / total;
    // p_i / (2 n0) over treated, q_l / (2 n1) over controls
    let var = add(var_of_mean(&p, 2 * n0 as i128), var_of_mean(&q, 2 * n1 as i128));
    (u_y, u_s, u_y - u_s, to_f64(var))
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut rank_mismatch = 0;
    let tied = |rng: &mut ChaCha8Rng, n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(0..5) as f64 * 0.5).collect() };
    for k in 0..1000 {
        if k % 2 == 0 {
            let n = rng.random_range(2..=20);
            let (y0, y1, s0, s1) = (tied(&mut rng, n), tied(&mut rng, n), tied(&mut rng, n), tied(&mut rng, n));
            let e = estimate_paired(&y0, &y1, &s0, &s1).unwrap();
            if (e.u_y, e.u_s, e.delta, e.var_delta) != brute_paired(&y0, &y1, &s0, &s1) {
                rank_mismatch += 1;
            }
        } else {
            let n1 = rng.random_range(2..=10);
            let n0 = rng.random_range(2..=10);
            let (y_t, s_t, y_c, s_c) = (tied(&mut rng, n1), tied(&mut rng, n1), tied(&mut rng, n0), tied(&mut rng, n0));
            let e = estimate_two_arm(&y_t, &s_t, &y_c, &s_c).unwrap();
            if (e.u_y, e.u_s, e.delta, e.var_delta) != brute_two_arm(&y_t, &s_t, &y_c, &s_c) {
                rank_mismatch += 1;
            }
        }
    }

    // REML against a grid search of the restricted log-likelihood over
    // [0, 0.5]: step 1e-4, then step 1e-6 around the coarse maximum.
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let m = rng.random_range(2..=10);
        let tau2: f64 = rng.random_range(0.0..0.05);
        let variances: Vec<f64> = (0..m).map(|_| rng.random_range(0.002..0.05)).collect();
        let deltas: Vec<f64> = variances
            .iter()
            .map(|v| {
                let z1: f64 = StandardNormal.sample(&mut rng);
                let z2: f64 = StandardNormal.sample(&mut rng);
                0.05 + tau2.sqrt() * z1 + v.sqrt() * z2
            })
            .collect();
        let input = MetaInput::from_estimates(deltas, variances).unwrap();
        let est = estimate_tau2_reml(&input, None).unwrap();
        let ll = |t: f64| restricted_log_likelihood(t, &input).unwrap();
        let argmax = |lo: f64, hi: f64, step: f64| {
            let k = ((hi - lo) / step).round() as usize;
            (0..=k).map(|i| lo + i as f64 * step).max_by(|a, b| ll(*a).total_cmp(&ll(*b))).unwrap()
        };
        let coarse = argmax(0.0, 0.5, 1e-4);
        let lo = (coarse - 2e-4).max(0.0);
        let fine = argmax(lo, lo + 4e-4, 1e-6);
        worst = worst.max((fine - est).abs());
    }
    Outcome {
        pass: rank_mismatch == 0 && worst <= 1e-6,
        detail: format!("rank estimates differing from brute force: {rank_mismatch}/1000; max |REML - grid| = {worst:.2e} over 500 instances"),
    }
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let alpha = 0.05;
    let opts = PoolOptions {
        ci_level: 1.0 - 2.0 * alpha,
        ..PoolOptions::default()
    };
    let mut discrepancies = 0;
    let mut significant = 0;
    for _ in 0..1000 {
        let m = rng.random_range(2..=12);
        let centre = rng.random_range(-0.15..0.15);
        let variances: Vec<f64> = (0..m).map(|_| rng.random_range(0.0005..0.02)).collect();
        let deltas: Vec<f64> = variances
            .iter()
            .map(|v| {
                let z: f64 = StandardNormal.sample(&mut rng);
                centre + v.sqrt() * z
            })
            .collect();
        let eps = rng.random_range(0.05..0.3);
        let pooled = pool_effects(&MetaInput::from_estimates(deltas, variances).unwrap(), &opts).unwrap();
        let p = tost_p(pooled.mu_hat, pooled.se_pooled, pooled.df, eps).unwrap().p_tost;
        let inside = pooled.ci_low > -eps && pooled.ci_high < eps;
        significant += usize::from(p < alpha);
        if (p < alpha) != inside {
            discrepancies += 1;
        }
    }
    Outcome {
        pass: discrepancies == 0,
        detail: format!("{discrepancies} discrepancies in 1000 pooled results ({significant} significant)"),
    }
}

/// Step-up adjustment straight from its definition:
/// `adj_i = min over p_j >= p_i of min(1, n p_j / #{l : p_l <= p_j})`.
fn bh_by_definition(p: &[f64]) -> Vec<f64> {
    let n = p.len() as f64;
    p.iter()
        .map(|&pi| {
            p.iter()
                .filter(|&&pj| pj >= pi)
                .map(|&pj| (n * pj / p.iter().filter(|&&pl| pl <= pj).count() as f64).min(1.0))
                .fold(1.0, f64::min)
        })
        .collect()
}

fn criterion_7() -> Outcome {
    let same = EffectPairs::new(vec![0.55, 0.62, 0.71, 0.9], vec![0.55, 0.62, 0.71, 0.9], vec![20; 4]).unwrap();
    let c1 = ccc(&same).unwrap();
    let i1 = icc21(&same).unwrap();
    let hand = ccc(&EffectPairs::new(vec![0.6, 0.7], vec![0.7, 0.8], vec![20; 2]).unwrap()).unwrap();
    let hand_err = (hand - 1.0 / 3.0).abs();

    let mut vectors: Vec<(Vec<f64>, Option<Vec<f64>>)> = vec![
        (vec![0.01, 0.04, 0.03, 0.02], Some(vec![0.04, 0.04, 0.04, 0.04])),
        (vec![0.001, 0.2, 0.5], Some(vec![0.003, 0.3, 0.5])),
        (vec![0.05], Some(vec![0.05])),
        (vec![0.025, 0.05], Some(vec![0.05, 0.05])),
        (vec![0.3, 0.3, 0.3, 0.3], Some(vec![0.3, 0.3, 0.3, 0.3])),
        (vec![0.9, 0.01], Some(vec![0.9, 0.02])),
        (vec![1.0, 0.0, 0.5], Some(vec![1.0, 0.0, 0.75])),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    while vectors.len() < 20 {
        let n = rng.random_range(2..30);
        // coarse values so that ties occur
        let v: Vec<f64> = (0..n).map(|_| (rng.random_range(0..40) as f64) / 40.0).collect();
        vectors.push((v, None));
    }
    let mut bh_worst = 0.0f64;
    for (p, expected) in &vectors {
        let got = bh_adjust(p).unwrap();
        let want = expected.clone().unwrap_or_else(|| bh_by_definition(p));
        for (a, b) in got.iter().zip(&want) {
            bh_worst = bh_worst.max((a - b).abs());
        }
    }
    Outcome {
        pass: (c1 - 1.0).abs() < 1e-15 && (i1 - 1.0).abs() < 1e-15 && hand_err <= 1e-15 && bh_worst <= 1e-15,
        detail: format!(
            "CCC(identical)={c1}, ICC(identical)={i1}, |CCC hand - 1/3|={hand_err:.1e}, max BH deviation over 20 vectors {bh_worst:.1e}"
        ),
    }
}

fn permutation_data() -> Vec<surrmeta::StudyDataset> {
    synthetic_studies(&SyntheticConfig {
        design: Design::Paired,
        studies: 6,
        subjects: 25,
        markers: 200,
        planted: 0,
        y_shift: (0.8, 1.4),
        marker_shift: (-0.6, 0.6),
        jitter: 0.2,
        coupling: 0.5,
        planted_coupling: 0.0,
        seed: 1,
    })
    .unwrap()
}

fn criterion_8() -> Outcome {
    let data = permutation_data();
    let cfg = PermutationConfig {
        n_reps: 500,
        n_per_study: None,
        n_studies: None,
        alpha: 0.05,
        epsilon: EpsilonPolicy::Power { alpha: 0.05, power: 0.8 },
        pool: PoolOptions::default(),
        seed: 8,
    };
    let all = run_permutation_fpr(&data, &cfg).unwrap();
    let two = run_permutation_fpr(&data, &PermutationConfig { n_studies: Some(2), ..cfg }).unwrap();
    Outcome {
        pass: all.mean <= 0.05 && two.mean <= 0.12,
        detail: format!(
            "6 studies: mean FPR {:.4} (max {:.4}); 2 studies: mean FPR {:.4} (max {:.4})",
            all.mean, all.max, two.mean, two.max
        ),
    }
}

fn criterion_9() -> Outcome {
    let policy = EpsilonPolicy::Power { alpha: 0.05, power: 0.8 };
    let mut recovered = 0;
    let mut concordant = 0;
    let mut failures = Vec::new();
    for seed in 0..100u64 {
        let cfg = SyntheticConfig {
            design: Design::TwoArm,
            studies: 6,
            subjects: 40,
            markers: 50,
            planted: 1,
            y_shift: (-1.5, 1.5),
            marker_shift: (-1.0, 1.0),
            jitter: 0.2,
            coupling: 0.5,
            planted_coupling: 0.9,
            seed,
        };
        let train = synthetic_studies(&cfg).unwrap();
        let holdout = synthetic_studies(&SyntheticConfig { seed: seed + 1_000_000, ..cfg }).unwrap();
        let report = match screen(&train, &ScreenOptions { epsilon: policy, ..ScreenOptions::default() }) {
            Ok(r) => r,
            Err(e) => {
                failures.push(format!("seed {seed}: screen: {e}"));
                continue;
            }
        };
        if report.gamma_names().contains(&"planted01") {
            recovered += 1;
        }
        if report.signature.is_empty() {
            continue;
        }
        let eps = policy.resolve(&holdout).unwrap();
        let opts = EvaluateOptions { seed, ..EvaluateOptions::default() };
        match evaluate_signature(&holdout, &report.signature, eps, &opts) {
            Ok(ev) if ev.ccc().is_some_and(|c| c >= 0.9) => concordant += 1,
            Ok(_) => {}
            Err(e) => failures.push(format!("seed {seed}: evaluate: {e}")),
        }
    }
    Outcome {
        pass: recovered >= 95 && concordant >= 95,
        detail: format!(
            "planted marker in screened set {recovered}/100, holdout CCC >= 0.9 in {concordant}/100{}",
            if failures.is_empty() { String::new() } else { format!("; errors: {}", failures.join(" | ")) }
        ),
    }
}

fn criterion_10() -> Outcome {
    // (U_Y, U_S) bivariate normal: sd 0.1 each, correlation 0.8, mean shift 0.03
    let (sd, rho, shift) = (0.1f64, 0.8f64, 0.03f64);
    let truth = 2.0 * rho * sd * sd / (2.0 * sd * sd + shift * shift);
    let mut covered = 0;
    let mut failed = 0;
    for run in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(10_000 + run);
        let mut uy = Vec::with_capacity(20);
        let mut us = Vec::with_capacity(20);
        for _ in 0..20 {
            let z1: f64 = StandardNormal.sample(&mut rng);
            let z2: f64 = StandardNormal.sample(&mut rng);
            uy.push(0.7 + sd * z1);
            us.push(0.7 - shift + sd * (rho * z1 + (1.0 - rho * rho).sqrt() * z2));
        }
        let pairs = EffectPairs::new(uy, us, vec![30; 20]).unwrap();
        match bca_bootstrap_ci(Statistic::Ccc, &pairs, 2000, 0.95, run) {
            Ok(ci) if ci.low <= truth && truth <= ci.high => covered += 1,
            Ok(_) => {}
            Err(_) => failed += 1,
        }
    }
    let rate = covered as f64 / 1000.0;
    Outcome {
        pass: (0.93..=0.97).contains(&rate),
        detail: format!("coverage {rate:.3} of population CCC {truth:.4} over 1000 runs (B=2000, M=20); {failed} runs without an interval"),
    }
}

fn main() {
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let selected = |k: usize| filter.as_ref().is_none_or(|f| f.split(',').any(|x| x == k.to_string()));
    let start = Instant::now();
    let mut failed = Vec::new();
    let mut report = |k: usize, name: &str, run: &dyn Fn() -> Outcome| {
        if !selected(k) {
            return;
        }
        let t = Instant::now();
        let o = run();
        println!(
            "[{}] criterion {k:>2} {name}: {} ({:.1}s)",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t.elapsed().as_secs_f64()
        );
        if !o.pass {
            failed.push(k);
        }
    };
    report(1, "calibration grid", &criterion_1);
    let re = if selected(2) || selected(4) { heterogeneity_grid(MetaModel::RE_HKSJ) } else { Vec::new() };
    report(2, "heterogeneity calibration", &|| criterion_2(&re));
    report(3, "power extremes", &criterion_3);
    report(4, "estimator variants", &|| criterion_4(&re));
    report(5, "oracle equivalence", &criterion_5);
    report(6, "TOST/CI duality", &criterion_6);
    report(7, "metric identities", &criterion_7);
    report(8, "permutation FPR", &criterion_8);
    report(9, "planted-signal recovery", &criterion_9);
    report(10, "BCa coverage", &criterion_10);
    println!("acceptance finished in {:.1}s", start.elapsed().as_secs_f64());
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
