//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the report is always printed. Exits
//! non-zero when any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rram_noise::analysis::{self, logistic, AccuracyCurve};
use rram_noise::bitnoise::{
    apply_bitflip_noise, flip_word, hamming_distance, inject, FlipTensorPair, NoiseSpec,
};
use rram_noise::device::{lognormal_cdf, normal_cdf, solve_threshold, ResistanceDistribution};
use rram_noise::harness::{self, CurveSummary, Grid, SweepConfig, SweepRow, Workload};
use rram_noise::nn::kernels::{batchnorm2d, conv2d, linear, maxpool2d, Conv2dGeometry};
use rram_noise::rng::{standard_normal, RngStream};
use rram_noise::tensor::{BitWords, ElementType, Tensor};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(limit: Duration, t: Instant, detail: String) -> Outcome {
    let el = t.elapsed();
    if el <= limit {
        Ok(format!("{detail}; {:.2} s", el.as_secs_f64()))
    } else {
        Err(format!(
            "{detail}; took {:.2} s, limit {} s",
            el.as_secs_f64(),
            limit.as_secs()
        ))
    }
}

// ---------------------------------------------------------------- 1

fn oracle_word(x: u64, f1: u64, f2: u64, width: u32) -> u64 {
    let mut y = 0;
    for b in 0..width {
        let xb = (x >> b) & 1;
        let out = if xb == 0 {
            (f1 >> b) & 1
        } else {
            1 ^ ((f2 >> b) & 1)
        };
        y |= out << b;
    }
    y
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let mut mismatches = 0u64;
    for x in 0..16u64 {
        for f1 in 0..16u64 {
            for f2 in 0..16u64 {
                if flip_word(x, f1, f2) & 0xF != oracle_word(x, f1, f2, 4) {
                    mismatches += 1;
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    const N: usize = 1_000_000;
    let mut random_words = 0;
    for dtype in [ElementType::Float32, ElementType::Float64] {
        let w = dtype.bit_width();
        let mask = dtype.word_mask();
        let draw =
            |rng: &mut ChaCha8Rng| -> Vec<u64> { (0..N).map(|_| rng.next_u64() & mask).collect() };
        let (x, f1, f2) = (draw(&mut rng), draw(&mut rng), draw(&mut rng));
        let xt =
            Tensor::from_bits(vec![N], dtype, &BitWords::from_u64s(w, x.iter().copied())).unwrap();
        let flips = FlipTensorPair {
            f_set: BitWords::from_u64s(w, f1.iter().copied()),
            f_clear: BitWords::from_u64s(w, f2.iter().copied()),
        };
        let y = apply_bitflip_noise(&xt, &flips).unwrap().bit_view();
        for i in 0..N {
            let want = oracle_word(x[i], f1[i], f2[i], w);
            if y.get(i) != want || flip_word(x[i], f1[i], f2[i]) & mask != want {
                mismatches += 1;
            }
        }
        random_words += N;
    }
    if mismatches > 0 {
        return Err(format!("{mismatches} mismatches"));
    }
    within(
        Duration::from_secs(10),
        t,
        format!("4096 4-bit combinations and {random_words} random 32/64-bit words, 0 mismatches"),
    )
}

// ---------------------------------------------------------------- 2

fn criterion_2() -> Outcome {
    let t = Instant::now();
    const N: usize = 400_000;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let words: Vec<u64> = (0..N).map(|_| rng.next_u64() & 0xFFFF_FFFF).collect();
    let x = Tensor::from_bits(
        vec![N],
        ElementType::Float32,
        &BitWords::from_u64s(32, words),
    )
    .unwrap();
    let bits = (N * 32) as f64;
    let mut parts = Vec::new();
    let mut ok = true;
    for (i, p) in [1e-4, 1e-2, 0.25].into_iter().enumerate() {
        let y = inject(
            &x,
            &NoiseSpec::symmetric(p),
            &RngStream::new(20).derive(i as u64),
        )
        .unwrap();
        let frac = hamming_distance(&x.bit_view(), &y.bit_view()) as f64 / bits;
        let tol = 3.0 * (p * (1.0 - p) / bits).sqrt();
        ok &= (frac - p).abs() <= tol;
        parts.push(format!("p={p:e}: {frac:.6e} (tol {tol:.1e})"));
    }
    let detail = format!("{} maskable bits; {}", bits, parts.join(", "));
    if !ok {
        return Err(detail);
    }
    within(Duration::from_secs(30), t, detail)
}

// ---------------------------------------------------------------- 3

fn criterion_3() -> Outcome {
    let t = Instant::now();
    let s = 10f64.ln() / 2.0;
    let lrs = ResistanceDistribution::new(1e4f64.ln(), s).unwrap();
    let hrs = ResistanceDistribution::new(1e6f64.ln(), s).unwrap();
    let (r, p) = solve_threshold(&lrs, &hrs).unwrap();
    let want_p = normal_cdf(-2.0);
    let analytic_ok = (r - 1e5).abs() <= 1e-6 * 1e5
        && (p - want_p).abs() <= 1e-6
        && (want_p - 0.022750).abs() < 1e-6;

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let m_l = rng.random_range(3.0..12.0f64) * 10f64.ln() / 2.0;
        let gap = rng.random_range(0.05..8.0f64);
        let lrs = ResistanceDistribution::new(m_l, rng.random_range(0.05..1.5)).unwrap();
        let hrs = ResistanceDistribution::new(m_l + gap, rng.random_range(0.05..1.5)).unwrap();
        let (r, _) = solve_threshold(&lrs, &hrs).unwrap();
        let residual = lognormal_cdf(r, &hrs).unwrap() - (1.0 - lognormal_cdf(r, &lrs).unwrap());
        worst = worst.max(residual.abs());
    }
    let detail = format!(
        "r_thresh = {r:.9e}, p_bf = {p:.9} (Phi(-2) = {want_p:.9}); max residual over 1000 draws {worst:.2e}"
    );
    if !(analytic_ok && worst <= 1e-10) {
        return Err(detail);
    }
    within(Duration::from_secs(5), t, detail)
}

// ---------------------------------------------------------------- 4

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect()
}

/// Worst `|got - want| / scale`, where `scale` is the sum of absolute terms.
fn worst_rel(got: &[f32], want: &[(f64, f64)]) -> f64 {
    assert_eq!(got.len(), want.len());
    got.iter()
        .zip(want)
        .map(|(&g, &(w, scale))| (g as f64 - w).abs() / scale.max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max)
}

fn criterion_4() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = [0.0f64; 4];
    const SHAPES: usize = 150;
    for _ in 0..SHAPES {
        // conv
        let (n, c, oc) = (
            rng.random_range(1..3),
            rng.random_range(1..5),
            rng.random_range(1..5),
        );
        let k = rng.random_range(1..6);
        let stride = rng.random_range(1..3);
        let padding = rng.random_range(0..3);
        let h = rng.random_range(k.max(1)..12);
        let w = rng.random_range(k.max(1)..12);
        let g = Conv2dGeometry {
            in_channels: c,
            out_channels: oc,
            kernel: k,
            stride,
            padding,
        };
        let x = rand_vec(&mut rng, n * c * h * w);
        let wt = rand_vec(&mut rng, oc * c * k * k);
        let b = rand_vec(&mut rng, oc);
        let (y, oh, ow) = conv2d(&x, (n, h, w), &wt, Some(&b), g);
        let mut want = Vec::new();
        for img in 0..n {
            for o in 0..oc {
                for r in 0..oh {
                    for col in 0..ow {
                        let (mut acc, mut scale) = (b[o] as f64, (b[o] as f64).abs());
                        for ci in 0..c {
                            for kh in 0..k {
                                for kw in 0..k {
                                    let ir = (r * stride + kh) as isize - padding as isize;
                                    let ic = (col * stride + kw) as isize - padding as isize;
                                    if ir < 0 || ic < 0 || ir >= h as isize || ic >= w as isize {
                                        continue;
                                    }
                                    let xv = x[((img * c + ci) * h + ir as usize) * w + ic as usize]
                                        as f64;
                                    let wv = wt[((o * c + ci) * k + kh) * k + kw] as f64;
                                    acc += xv * wv;
                                    scale += (xv * wv).abs();
                                }
                            }
                        }
                        want.push((acc, scale));
                    }
                }
            }
        }
        worst[0] = worst[0].max(worst_rel(&y, &want));

        // linear
        let (n, fi, fo) = (
            rng.random_range(1..4),
            rng.random_range(1..64),
            rng.random_range(1..16),
        );
        let x = rand_vec(&mut rng, n * fi);
        let wt = rand_vec(&mut rng, fo * fi);
        let b = rand_vec(&mut rng, fo);
        let y = linear(&x, n, &wt, Some(&b), fi, fo);
        let mut want = Vec::new();
        for r in 0..n {
            for o in 0..fo {
                let terms = (0..fi).map(|i| x[r * fi + i] as f64 * wt[o * fi + i] as f64);
                let acc = b[o] as f64 + terms.clone().sum::<f64>();
                let scale = (b[o] as f64).abs() + terms.map(f64::abs).sum::<f64>();
                want.push((acc, scale));
            }
        }
        worst[1] = worst[1].max(worst_rel(&y, &want));

        // maxpool
        let (planes, kp) = (rng.random_range(1..6), rng.random_range(1..4));
        let sp = rng.random_range(1..3);
        let (h, w) = (rng.random_range(kp..10), rng.random_range(kp..10));
        let x = rand_vec(&mut rng, planes * h * w);
        let (y, oh, ow) = maxpool2d(&x, (planes, h, w), kp, sp);
        let mut want = Vec::new();
        for pl in 0..planes {
            for r in 0..oh {
                for col in 0..ow {
                    let mut m = f64::NEG_INFINITY;
                    for a in 0..kp {
                        for bb in 0..kp {
                            m = m.max(x[(pl * h + r * sp + a) * w + col * sp + bb] as f64);
                        }
                    }
                    want.push((m, m.abs()));
                }
            }
        }
        worst[2] = worst[2].max(worst_rel(&y, &want));

        // batchnorm
        let (n, c, hw) = (
            rng.random_range(1..3),
            rng.random_range(1..6),
            rng.random_range(1..20),
        );
        let x = rand_vec(&mut rng, n * c * hw);
        let gamma = rand_vec(&mut rng, c);
        let beta = rand_vec(&mut rng, c);
        let mean = rand_vec(&mut rng, c);
        let var: Vec<f32> = (0..c).map(|_| rng.random_range(0.01f32..2.0)).collect();
        let y = batchnorm2d(&x, c, hw, &gamma, &beta, &mean, &var, 1e-5);
        let want: Vec<(f64, f64)> = x
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let ch = (i / hw) % c;
                let sc = gamma[ch] as f64 / (var[ch] as f64 + 1e-5).sqrt();
                let centred = (v as f64 - mean[ch] as f64) * sc;
                (
                    centred + beta[ch] as f64,
                    centred.abs() + (beta[ch] as f64).abs(),
                )
            })
            .collect();
        worst[3] = worst[3].max(worst_rel(&y, &want));
    }
    let detail = format!(
        "{SHAPES} random shapes per kernel (stride 1-2); worst relative error conv {:.1e}, linear {:.1e}, maxpool {:.1e}, batchnorm {:.1e}",
        worst[0], worst[1], worst[2], worst[3]
    );
    if worst.iter().any(|&e| e > 1e-5) {
        return Err(detail);
    }
    within(Duration::from_secs(60), t, detail)
}

// ---------------------------------------------------------------- 5

fn criterion_5() -> Outcome {
    let t = Instant::now();
    let grid = Grid::default().points().unwrap();
    let (k, a_max) = (10, 0.9);
    let (a_min, da) = (0.1, (0.9 - 0.1) / 2.0);
    let mut worst_exact: f64 = 0.0;
    for mu in [1e-7f64, 1e-5, 1e-3, 1e-2] {
        for sigma in [0.2, 0.5, 1.0] {
            let samples: Vec<(f64, f64)> = grid
                .iter()
                .map(|&p| (p, logistic(p.log10(), mu.log10(), sigma, a_min, da)))
                .collect();
            let fit =
                analysis::fit_logistic(&AccuracyCurve::from_samples(&samples, k, a_max).unwrap())
                    .unwrap();
            if !fit.converged {
                return Err(format!(
                    "exact curve mu={mu:e} sigma={sigma}: {:?}",
                    fit.diagnostic
                ));
            }
            worst_exact = worst_exact.max((fit.mu / mu - 1.0).abs());
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_noisy: f64 = 0.0;
    let mut failures = 0;
    const TRIALS: usize = 100;
    const REPS: usize = 5;
    for _ in 0..TRIALS {
        let mu = 10f64.powf(rng.random_range(-6.0..-3.0));
        let sigma = rng.random_range(0.2..0.6);
        let mut samples = Vec::new();
        for &p in &grid {
            let f = logistic(p.log10(), mu.log10(), sigma, a_min, da);
            for _ in 0..REPS {
                samples.push((p, f + 0.01 * standard_normal(&mut rng)));
            }
        }
        let curve = AccuracyCurve::from_samples(&samples, k, a_max).unwrap();
        let fit = analysis::fit_logistic(&curve).unwrap();
        let err = if fit.converged {
            (fit.mu / mu - 1.0).abs()
        } else {
            f64::INFINITY
        };
        if err > 0.05 {
            failures += 1;
        }
        worst_noisy = worst_noisy.max(err);
    }
    let detail = format!(
        "exact curves worst mu error {:.2e}; {TRIALS} noisy trials ({REPS} reps, sd 0.01) worst {:.2}%, {failures} outside 5%",
        worst_exact,
        worst_noisy * 100.0
    );
    if worst_exact > 0.01 || failures > 0 {
        return Err(detail);
    }
    within(Duration::from_secs(10), t, detail)
}

// ---------------------------------------------------------------- shared desk workload

const DESK_IMAGES: usize = 2000;
const DESK_REPS: usize = 5;
const BITMASK_IMAGES: usize = 1000;
const BITMASK_REPS: usize = 3;

fn fixture() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/desk_cnn/desk_cnn.json")
}

fn desk_config(dtype: ElementType) -> SweepConfig {
    SweepConfig {
        model: fixture(),
        data: Some(format!("synthetic:{DESK_IMAGES}")),
        dtype,
        grid: Grid::LogSpaced {
            min: 1e-8,
            max: 1e-1,
            per_decade: 2,
        },
        repetitions: DESK_REPS,
        seed: 2024,
        ..SweepConfig::default()
    }
}

/// Standard error of a curve point: spread over repetitions plus the
/// binomial sampling error of an accuracy measured on `n` images.
fn point_se(mean: f64, std: f64, reps: usize, n: usize) -> f64 {
    (std * std / reps as f64 + mean * (1.0 - mean) / n as f64).sqrt()
}

struct Desk {
    work: Workload,
    float32: Option<CurveSummary>,
}

impl Desk {
    fn load() -> Desk {
        Desk {
            work: Workload::load(&desk_config(ElementType::Float32)).expect("desk workload"),
            float32: None,
        }
    }

    fn curve(&self, dtype: ElementType) -> CurveSummary {
        let out = harness::sweep_curves(&self.work, &desk_config(dtype), dtype).unwrap();
        out.summaries.into_iter().next().unwrap()
    }

    fn float32(&mut self) -> CurveSummary {
        if self.float32.is_none() {
            self.float32 = Some(self.curve(ElementType::Float32));
        }
        self.float32.clone().unwrap()
    }
}

fn describe(s: &CurveSummary) -> String {
    match s.mu {
        Some(mu) => format!("mu({}) = {mu:.3e}", s.dtype),
        None => format!(
            "{} fit not converged: {}",
            s.dtype,
            s.diagnostic.clone().unwrap_or_default()
        ),
    }
}

// ---------------------------------------------------------------- 6

fn criterion_6(desk: &mut Desk) -> Outcome {
    let t = Instant::now();
    let s = desk.float32();
    let pts = &s.curve.points;
    let last = pts.last().unwrap();
    let chance_ok = (last.accuracy_mean - 0.1).abs() <= 0.03 && (last.p - 0.1).abs() < 1e-12;
    let mut worst_rise = f64::NEG_INFINITY;
    let mut monotone = true;
    for w in pts.windows(2) {
        let se = point_se(
            w[0].accuracy_mean,
            w[0].accuracy_std,
            w[0].repetitions,
            DESK_IMAGES,
        )
        .hypot(point_se(
            w[1].accuracy_mean,
            w[1].accuracy_std,
            w[1].repetitions,
            DESK_IMAGES,
        ));
        let rise = (w[1].accuracy_mean - w[0].accuracy_mean) / se;
        worst_rise = worst_rise.max(rise);
        monotone &= rise <= 2.0;
    }
    let detail = format!(
        "{DESK_IMAGES} images, {} points x {DESK_REPS} reps; {}, sigma {}; clean {:.4}; accuracy at 1e-1 = {:.4}; largest rise {:.2} SE; {:.0} s",
        pts.len(),
        describe(&s),
        s.sigma.map_or("-".into(), |v| format!("{v:.3}")),
        s.a_max,
        last.accuracy_mean,
        worst_rise,
        t.elapsed().as_secs_f64()
    );
    check(s.converged && chance_ok && monotone, detail)
}

// ---------------------------------------------------------------- 7

fn criterion_7(desk: &Desk) -> Outcome {
    let t = Instant::now();
    let mut work = desk.work.clone();
    work.data = work.data.take(BITMASK_IMAGES);
    let cfg = SweepConfig {
        data: Some(format!("synthetic:{BITMASK_IMAGES}")),
        grid: Grid::LogSpaced {
            min: 1e-6,
            max: 0.5,
            per_decade: 2,
        },
        repetitions: BITMASK_REPS,
        start_bits: (1..=8).collect(),
        ..desk_config(ElementType::Float32)
    };
    let out = harness::sweep_curves(&work, &cfg, ElementType::Float32).unwrap();
    let mus: Vec<Option<f64>> = out.summaries.iter().map(|s| s.mu).collect();
    let increasing =
        mus.iter().all(Option::is_some) && mus.windows(2).all(|w| w[1].unwrap() > w[0].unwrap());

    let model = work.network.clone();
    let a_max = harness::baseline(&model, &work.data, &cfg).unwrap();
    let low: Vec<f64> = cfg
        .grid
        .points()
        .unwrap()
        .into_iter()
        .filter(|&p| p <= 1e-2)
        .collect();
    let rows =
        harness::evaluate_grid(&model, &work.data, &cfg, ElementType::Float32, 9, &low).unwrap();
    let worst_drop = mean_by_p(&rows)
        .iter()
        .map(|&(_, m)| a_max - m)
        .fold(f64::NEG_INFINITY, f64::max);
    let listed: Vec<String> = mus
        .iter()
        .zip(1..)
        .map(|(m, b)| format!("{b}:{}", m.map_or("-".into(), |m| format!("{m:.2e}"))))
        .collect();
    let detail = format!(
        "{BITMASK_IMAGES} images, {BITMASK_REPS} reps; mu by start bit [{}]; mantissa-only worst drop for p <= 1e-2: {:.2} pp; {:.0} s",
        listed.join(" "),
        worst_drop * 100.0,
        t.elapsed().as_secs_f64()
    );
    check(increasing && worst_drop < 0.01, detail)
}

fn mean_by_p(rows: &[SweepRow]) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = Vec::new();
    for group in rows.chunk_by(|a, b| a.p == b.p) {
        out.push((
            group[0].p,
            group.iter().map(|r| r.accuracy).sum::<f64>() / group.len() as f64,
        ));
    }
    out
}

// ---------------------------------------------------------------- 8

fn criterion_8(desk: &mut Desk) -> Outcome {
    let t = Instant::now();
    let f32c = desk.float32();
    let f16c = desk.curve(ElementType::Float16);
    let f64c = desk.curve(ElementType::Float64);
    let bf16c = desk.curve(ElementType::Bfloat16);
    let ordered = match (f16c.mu, f32c.mu, f64c.mu) {
        (Some(a), Some(b), Some(c)) => a >= b && b >= c,
        _ => false,
    };
    let mut worst = 0.0f64;
    for (a, b) in f32c.curve.points.iter().zip(&bf16c.curve.points) {
        let se = point_se(a.accuracy_mean, a.accuracy_std, a.repetitions, DESK_IMAGES).hypot(
            point_se(b.accuracy_mean, b.accuracy_std, b.repetitions, DESK_IMAGES),
        );
        worst = worst.max((a.accuracy_mean - b.accuracy_mean).abs() / se);
    }
    let detail = format!(
        "{}, {}, {}, {}; worst float32/bfloat16 gap {:.2} SE; {:.0} s",
        describe(&f16c),
        describe(&f32c),
        describe(&f64c),
        describe(&bf16c),
        worst,
        t.elapsed().as_secs_f64()
    );
    check(ordered && worst <= 2.0, detail)
}

// ---------------------------------------------------------------- 9

fn criterion_9(desk: &mut Desk) -> Outcome {
    let t = Instant::now();
    let f32c = desk.float32();
    let int8c = desk.curve(ElementType::Int8);
    let ratio = match (int8c.mu, f32c.mu) {
        (Some(a), Some(b)) => a / b,
        _ => f64::NAN,
    };
    let gap = (int8c.a_max - f32c.a_max).abs();
    let detail = format!(
        "{}, {}, ratio {ratio:.0}x; clean accuracy int8 {:.4} vs float32 {:.4}; {:.0} s",
        describe(&int8c),
        describe(&f32c),
        int8c.a_max,
        f32c.a_max,
        t.elapsed().as_secs_f64()
    );
    check(ratio >= 100.0 && gap <= 0.02, detail)
}

// ---------------------------------------------------------------- 10

fn criterion_10() -> Outcome {
    let t = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let cfg = SweepConfig {
        model: fixture(),
        data: Some("synthetic:200".into()),
        grid: Grid::Explicit(vec![1e-5, 1e-3, 3e-2, 1e-1]),
        repetitions: 2,
        start_bits: vec![0, 3],
        seed: 99,
        ..SweepConfig::default()
    };
    let mut runs = Vec::new();
    for (i, threads) in [1, 4].into_iter().enumerate() {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        let out = pool
            .install(|| {
                harness::run_dtype_sweep(
                    &cfg,
                    &[
                        ElementType::Float16,
                        ElementType::Float32,
                        ElementType::Int8,
                    ],
                )
            })
            .unwrap();
        let path = dir.path().join(format!("run{i}.csv"));
        out.write(&path).unwrap();
        runs.push((out, std::fs::read_to_string(&path).unwrap()));
    }
    let strip = |csv: &str| -> Vec<String> {
        csv.lines()
            .map(|l| l.rsplit_once(',').unwrap().0.to_string())
            .collect()
    };
    let (a, b) = (&runs[0].0.rows, &runs[1].0.rows);
    let identical = a.len() == b.len()
        && a.iter()
            .zip(b)
            .all(|(x, y)| x.accuracy.to_bits() == y.accuracy.to_bits() && x.p == y.p)
        && strip(&runs[0].1) == strip(&runs[1].1);
    let detail = format!(
        "{} rows over float16/float32/int8 and start bits 0, 3, re-run with 1 and 4 threads: {}; {:.0} s",
        a.len(),
        if identical { "bit-identical" } else { "DIFFERENT" },
        t.elapsed().as_secs_f64()
    );
    check(identical, detail)
}

// ---------------------------------------------------------------- driver

fn main() {
    let args: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let selected = |n: usize| args.is_empty() || args.iter().any(|a| a == &n.to_string());
    let mut desk: Option<Desk> = None;
    let mut failed = Vec::new();
    for n in 1..=10 {
        if !selected(n) {
            continue;
        }
        let result = catch_unwind(AssertUnwindSafe(|| match n {
            1 => criterion_1(),
            2 => criterion_2(),
            3 => criterion_3(),
            4 => criterion_4(),
            5 => criterion_5(),
            10 => criterion_10(),
            _ => {
                let d = desk.get_or_insert_with(Desk::load);
                match n {
                    6 => criterion_6(d),
                    7 => criterion_7(d),
                    8 => criterion_8(d),
                    _ => criterion_9(d),
                }
            }
        }))
        .unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match result {
            Ok(d) => println!("criterion {n:>2}: PASS  {d}"),
            Err(d) => {
                println!("criterion {n:>2}: FAIL  {d}");
                failed.push(n);
            }
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
