//! Acceptance suite. One line per criterion, then a tally.
//!
//! Plain `cargo test` runs every criterion that fits in a few minutes. The
//! ETTm2 reproduction (5) and the training-time half of (7) are measured on
//! that run; they need `data/ETTm2.csv` at the workspace root and the
//! `--full` flag:
//!
//! ```text
//! cargo test --release -p hnmvts --test acceptance -- --full
//! ```
//!
//! Without them, (7a) is measured on ETTm2-shaped synthetic data and
//! reported without gating the exit status.

use std::path::PathBuf;
use std::time::Instant;

use hnmvts::backbones::BackboneConfig;
use hnmvts::bench::{
    run_experiment_on, summarize, wilcoxon_enumerate, wilcoxon_signed_rank, ExperimentConfig,
    RunStatus,
};
use hnmvts::data::{gen_synthetic, SeriesTable, SplitSpec, SyntheticSpec, WindowSet};
use hnmvts::hypernet::{
    generate_weights, param_count, w_phi_name, EmbeddingMatrix, GeneratorMode, GeneratorParams,
    HyperConfig, HyperHead,
};
use hnmvts::numcore::{backward, finite_diff_check, set_seed, SeededRng, Tape, DEFAULT_STEP};
use hnmvts::params::Bound;
use hnmvts::trainer::{train, TrainConfig};
use hnmvts::{ForecastModel, ModelConfig, Tensor, Variant};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Clone, Copy, PartialEq)]
enum Status {
    Pass,
    Fail,
    /// Measured and printed, but outside the gating set for this mode.
    Report(bool),
    Blocked,
}

struct Suite {
    lines: Vec<(String, Status)>,
}

impl Suite {
    fn record(&mut self, id: &str, status: Status, detail: String) {
        let tag = match status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Report(true) => "PASS (reported)",
            Status::Report(false) => "FAIL (reported)",
            Status::Blocked => "BLOCKED",
        };
        println!("[{tag}] {id}: {detail}");
        self.lines.push((id.to_string(), status));
    }

    fn check(&mut self, id: &str, ok: bool, detail: String) {
        self.record(id, if ok { Status::Pass } else { Status::Fail }, detail);
    }
}

fn uniform_int(rng: &mut SeededRng, lo: usize, hi: usize) -> usize {
    lo + (rng.uniform(0.0, (hi - lo + 1) as f64) as usize).min(hi - lo)
}

fn table(n: usize, len: usize, seed: u64) -> SeriesTable {
    gen_synthetic(&SyntheticSpec::two_groups(n, len, 0.8, 0.3), seed).unwrap()
}

/// Random small configuration cycling through backbones and generator modes.
fn random_config(
    rng: &mut SeededRng,
    case: usize,
    max_n: usize,
    max_t: usize,
    max_h: usize,
) -> ModelConfig {
    let n = uniform_int(rng, 2, max_n);
    let lookback = uniform_int(rng, 4, max_t);
    let backbone = if case.is_multiple_of(2) {
        let mut b = BackboneConfig::dlinear();
        b.kernel = 2 * uniform_int(rng, 0, (lookback - 1) / 2) + 1;
        b
    } else {
        BackboneConfig::mlp(vec![uniform_int(rng, 2, 6), uniform_int(rng, 2, 6)])
    };
    let mode = if (case / 2).is_multiple_of(2) {
        GeneratorMode::PerChannelLinear
    } else {
        GeneratorMode::SharedMlp
    };
    ModelConfig {
        n_channels: n,
        lookback,
        horizon: uniform_int(rng, 1, max_h),
        backbone,
        variant: Variant::HnMvts,
        hyper: HyperConfig {
            mode,
            embedding_dim: Some(uniform_int(rng, 1, n)),
            learnable_embeddings: !case.is_multiple_of(3),
            generator_hidden: vec![uniform_int(rng, 2, 5)],
        },
        revin: case % 5 != 4,
        shared_final: false,
    }
}

/// Fresh model with every parameter nudged off its initialisation.
fn perturbed_model(cfg: ModelConfig, seed: u64) -> ForecastModel {
    let mut rng = set_seed(seed);
    let data = table(cfg.n_channels, 4 * (cfg.lookback + cfg.horizon) + 40, seed);
    let mut model = ForecastModel::new(cfg, &data, &mut rng).unwrap();
    for t in model.params_mut().values_mut() {
        for v in t.data_mut() {
            *v += 0.1 * rng.normal();
        }
    }
    model
}

fn c1_bake_equivalence(s: &mut Suite) {
    let mut rng = set_seed(101);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let cfg = random_config(&mut rng, case, 6, 24, 8);
        let (n, t) = (cfg.n_channels, cfg.lookback);
        let model = perturbed_model(cfg, 1000 + case as u64);
        let baked = model.bake().unwrap();
        let b = uniform_int(&mut rng, 1, 4);
        let x = rng.normal_tensor([n, b, t], 2.0).map(|v| v + 3.0);
        let d = model
            .predict(&x)
            .unwrap()
            .max_abs_diff(&baked.predict(&x).unwrap())
            .unwrap();
        worst = worst.max(d);
    }
    s.check(
        "C1 bake equivalence",
        worst <= 1e-10,
        format!("100 cases, max |hyper - baked| = {worst:.3e} (tol 1e-10)"),
    );
}

fn c2_gradient_check(s: &mut Suite) {
    let mut rng = set_seed(202);
    let mut worst = 0.0f64;
    let cases = 24;
    for case in 0..cases {
        let mut cfg = random_config(&mut rng, case, 4, 16, 4);
        cfg.revin = true;
        let d = cfg.hyper.embedding_dim.unwrap().min(4);
        cfg.hyper.embedding_dim = Some(d);
        let (n, t, h) = (cfg.n_channels, cfg.lookback, cfg.horizon);
        let model = perturbed_model(cfg, 2000 + case as u64);
        let x = rng.normal_tensor([n, 3, t], 1.0);
        let y = rng.normal_tensor([n, 3, h], 1.0);
        let names: Vec<String> = model.params().keys().cloned().collect();
        let point: Vec<Tensor> = model.params().values().cloned().collect();
        let err = finite_diff_check(
            |tape, vars| {
                let mut bound: Vec<(String, _)> =
                    names.iter().cloned().zip(vars.iter().copied()).collect();
                for (k, v) in model.buffers() {
                    bound.push((k.clone(), tape.constant(v.clone())));
                }
                let bound = Bound::from_vars(bound.into_iter().collect());
                let out = model.forward(&bound, tape.constant(x.clone()))?;
                Ok(out.raw.sub(tape.constant(y.clone()))?.square().mean())
            },
            &point,
            DEFAULT_STEP,
        )
        .unwrap();
        worst = worst.max(err);
    }
    s.check(
        "C2 gradient correctness",
        worst < 1e-4,
        format!(
            "{cases} cases (N<=4, T<=16, H<=4, d<=4), max relative error = {worst:.3e} (tol 1e-4)"
        ),
    );
}

fn c3_param_count(s: &mut Suite) {
    let mut mismatches = Vec::new();
    let mut configs = Vec::new();
    // The reference shape: N=7, H=48, D=336, d=7, one head, learnable Z.
    let mut reference = ModelConfig {
        n_channels: 7,
        lookback: 96,
        horizon: 48,
        backbone: BackboneConfig::mlp(vec![336]),
        variant: Variant::HnMvts,
        hyper: HyperConfig::default(),
        revin: true,
        shared_final: false,
    };
    configs.push(reference.clone());
    reference.backbone = BackboneConfig::dlinear();
    reference.lookback = 336;
    configs.push(reference);
    let mut rng = set_seed(303);
    for case in 0..12 {
        configs.push(random_config(&mut rng, case, 6, 40, 12));
    }

    let mut reference_count = None;
    for (i, cfg) in configs.iter().enumerate() {
        let model = perturbed_model(cfg.clone(), 3000 + i as u64);
        let counted: usize = model
            .params()
            .iter()
            .filter(|(k, _)| k.starts_with("hyper."))
            .map(|(_, t)| t.numel())
            .sum();
        let expected = param_count(
            cfg.n_channels,
            cfg.horizon,
            cfg.hidden_dim(),
            cfg.embedding_dim(),
            cfg.hyper.learnable_embeddings,
            cfg.hyper.mode,
            cfg.slots().len(),
            &cfg.hyper.generator_hidden,
        );
        if i == 0 {
            reference_count = Some(counted);
        }
        if counted != expected {
            mismatches.push(format!("config {i}: counted {counted}, formula {expected}"));
        }
    }
    let reference_ok = reference_count == Some(790_321);
    s.check(
        "C3 parameter count",
        mismatches.is_empty() && reference_ok,
        format!(
            "{} configs, {} mismatches; N=7 H=48 D=336 d=7 counts {} (expected 790321){}",
            configs.len(),
            mismatches.len(),
            reference_count.unwrap_or(0),
            if mismatches.is_empty() {
                String::new()
            } else {
                format!(": {}", mismatches.join("; "))
            }
        ),
    );
}

fn c4_tying_and_independence(s: &mut Suite) {
    let mut rng = set_seed(404);
    let mut failures = Vec::new();
    let cases = 60;
    for case in 0..cases {
        let mode = if case % 2 == 0 {
            GeneratorMode::PerChannelLinear
        } else {
            GeneratorMode::SharedMlp
        };
        let n = uniform_int(&mut rng, 2, 6);
        let d = uniform_int(&mut rng, 1, n);
        let (h, hd) = (uniform_int(&mut rng, 1, 5), uniform_int(&mut rng, 1, 7));
        let (n1, n2) = {
            let a = uniform_int(&mut rng, 0, n - 1);
            (a, (a + uniform_int(&mut rng, 1, n - 1)) % n)
        };

        // Tying: copy row n1 of Z (and its W_phi slice) onto n2.
        let mut z = rng.normal_tensor([n, d], 1.0);
        for j in 0..d {
            z.data_mut()[n2 * d + j] = z.data()[n1 * d + j];
        }
        let mut gen = GeneratorParams::init(mode, &z, h, hd, &[4], &mut rng).unwrap();
        if let GeneratorParams::PerChannelLinear { w_phi } = &mut gen {
            let slice = h * hd * d;
            let src: Vec<f64> = w_phi.data()[n1 * slice..(n1 + 1) * slice].to_vec();
            w_phi.data_mut()[n2 * slice..(n2 + 1) * slice].copy_from_slice(&src);
        }
        let head = HyperHead {
            z: EmbeddingMatrix {
                z: z.clone(),
                learnable: true,
            },
            gen: gen.clone(),
            target: "out".into(),
            horizon: h,
            hidden_dim: hd,
        };
        let w = head.generate_weights().unwrap();
        let slice = h * hd;
        if w.data()[n1 * slice..(n1 + 1) * slice] != w.data()[n2 * slice..(n2 + 1) * slice] {
            failures.push(format!("case {case}: tied slices differ"));
        }

        // Independence: a function of W_K[n1] has zero gradient with respect
        // to every other channel's embedding (and W_phi slice).
        let z = rng.normal_tensor([n, d], 1.0);
        let gen = GeneratorParams::init(mode, &z, h, hd, &[4], &mut rng).unwrap();
        let mut params = hnmvts::params::ParamMap::new();
        let probe_head = HyperHead {
            z: EmbeddingMatrix {
                z: z.clone(),
                learnable: true,
            },
            gen,
            target: "out".into(),
            horizon: h,
            hidden_dim: hd,
        };
        match &probe_head.gen {
            GeneratorParams::PerChannelLinear { w_phi } => {
                params.insert(w_phi_name("out"), w_phi.clone());
            }
            GeneratorParams::SharedMlp { layers } => {
                for (i, (wt, b)) in layers.iter().enumerate() {
                    params.insert(hnmvts::hypernet::mlp_weight_name("out", i), wt.clone());
                    if let Some(b) = b {
                        params.insert(hnmvts::hypernet::mlp_bias_name("out", i), b.clone());
                    }
                }
            }
        }
        let tape = Tape::new();
        let bound = Bound::new(&tape, &params, &Default::default());
        let zv = tape.param(z.clone());
        let wk = generate_weights(mode, &bound, "out", zv, h, hd).unwrap();
        let weights = tape.constant(rng.normal_tensor([1, h, hd], 1.0));
        let loss = wk
            .slice_axis(0, n1, n1 + 1)
            .unwrap()
            .mul(weights)
            .unwrap()
            .square()
            .sum();
        let grads = backward(loss).unwrap();
        let gz = grads.wrt(zv);
        for c in (0..n).filter(|&c| c != n1) {
            if gz.data()[c * d..(c + 1) * d].iter().any(|&g| g != 0.0) {
                failures.push(format!("case {case}: dW[{n1}]/dz[{c}] nonzero"));
            }
        }
        if mode == GeneratorMode::PerChannelLinear {
            let gw = grads.wrt(bound.get(&w_phi_name("out")).unwrap());
            let sl = h * hd * d;
            for c in (0..n).filter(|&c| c != n1) {
                if gw.data()[c * sl..(c + 1) * sl].iter().any(|&g| g != 0.0) {
                    failures.push(format!("case {case}: dW[{n1}]/dW_phi[{c}] nonzero"));
                }
            }
            if gw.data()[n1 * sl..(n1 + 1) * sl].iter().all(|&g| g == 0.0) {
                failures.push(format!("case {case}: own W_phi gradient vanished"));
            }
        }
    }
    s.check(
        "C4 channel tying and independence",
        failures.is_empty(),
        format!(
            "{cases} cases, both generator modes, {} violations{}",
            failures.len(),
            failures
                .first()
                .map(|f| format!(" (first: {f})"))
                .unwrap_or_default()
        ),
    );
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Mean within-group and between-group cosine similarity of the rows of `z`.
fn group_cosines(z: &Tensor, groups: &[usize]) -> (f64, f64) {
    let d = z.shape()[1];
    let row = |i: usize| &z.data()[i * d..(i + 1) * d];
    let (mut within, mut between) = (Vec::new(), Vec::new());
    for i in 0..groups.len() {
        for j in i + 1..groups.len() {
            let c = cosine(row(i), row(j));
            if groups[i] == groups[j] {
                within.push(c);
            } else {
                between.push(c);
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    (mean(&within), mean(&between))
}

fn c6_embedding_groups(s: &mut Suite) {
    let spec = SyntheticSpec::two_groups(8, 8192, 0.95, 0.1);
    let data = gen_synthetic(&spec, 6).unwrap();
    let split = SplitSpec::new([0.7, 0.2, 0.1], None).unwrap();
    let (tr, va, _) = hnmvts::data::chrono_split(&data, &split).unwrap();
    let (lookback, horizon) = (96, 24);
    let cfg = ModelConfig {
        n_channels: 8,
        lookback,
        horizon,
        backbone: BackboneConfig::dlinear(),
        variant: Variant::HnMvts,
        hyper: HyperConfig::default(),
        revin: true,
        shared_final: false,
    };
    let model = ForecastModel::new(cfg, &tr, &mut set_seed(6)).unwrap();
    let init = group_cosines(model.embeddings().unwrap(), &spec.groups);
    let tcfg = TrainConfig {
        lookback,
        horizon,
        max_epochs: 5,
        seed: 6,
        ..TrainConfig::default()
    };
    let train_w = WindowSet::new(tr, lookback, horizon).unwrap();
    let val_w = WindowSet::new(va, lookback, horizon).unwrap();
    let (best, _) = train(model, &train_w, &val_w, &tcfg).unwrap();
    let (within, between) = group_cosines(best.embeddings().unwrap(), &spec.groups);
    s.check(
        "C6 embedding groups",
        within - between > 0.2,
        format!(
            "N=8 rho=0.95 t=8192: within {within:.3}, between {between:.3}, gap {:.3} (need > 0.2; at init {:.3})",
            within - between,
            init.0 - init.1
        ),
    );
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs[xs.len() / 2]
}

/// Inference half of criterion 7: baked model vs baseline on one window.
fn c7b_inference_time(s: &mut Suite) {
    let (n, t, h) = (7, 336, 96);
    let data = table(n, 2000, 7);
    let mk = |variant| ModelConfig {
        n_channels: n,
        lookback: t,
        horizon: h,
        backbone: BackboneConfig::dlinear(),
        variant,
        hyper: HyperConfig::default(),
        revin: true,
        shared_final: false,
    };
    let baseline = ForecastModel::new(mk(Variant::Baseline), &data, &mut set_seed(7)).unwrap();
    let baked = ForecastModel::new(mk(Variant::HnMvts), &data, &mut set_seed(7))
        .unwrap()
        .bake()
        .unwrap();
    let x = set_seed(70).normal_tensor([n, t], 1.0);
    let (blocks, per_block) = (20, 500);
    let time_block = |m: &ForecastModel| {
        let start = Instant::now();
        for _ in 0..per_block {
            std::hint::black_box(m.predict_window(std::hint::black_box(&x)).unwrap());
        }
        start.elapsed().as_secs_f64() / per_block as f64
    };
    time_block(&baseline);
    time_block(&baked);
    // Interleaved blocks so drift in machine load hits both models alike.
    let (mut tb, mut tk) = (Vec::new(), Vec::new());
    for _ in 0..blocks {
        tb.push(time_block(&baseline));
        tk.push(time_block(&baked));
    }
    let ratio = median(tk.clone()) / median(tb.clone());
    s.check(
        "C7b baked inference time",
        ratio <= 1.05,
        format!(
            "{} calls each, median per call baseline {:.1} us, baked {:.1} us, ratio {ratio:.3} (tol 1.05)",
            blocks * per_block,
            1e6 * median(tb),
            1e6 * median(tk)
        ),
    );
}

fn c8_wilcoxon_oracle(s: &mut Suite) {
    let mut rng = set_seed(808);
    let mut mismatches = 0;
    for case in 0..100 {
        let k = 1 + case % 10;
        let a: Vec<f64> = (0..k).map(|_| uniform_int(&mut rng, 0, 6) as f64).collect();
        let b: Vec<f64> = (0..k).map(|_| uniform_int(&mut rng, 0, 6) as f64).collect();
        let got = wilcoxon_signed_rank(&a, &b, 0.05).unwrap();
        let (w, p) = wilcoxon_enumerate(&a, &b);
        if got.statistic != w || got.p_value != p {
            mismatches += 1;
        }
    }
    s.check(
        "C8 Wilcoxon exact oracle",
        mismatches == 0,
        format!("100 random integer-valued samples, k = 1..=10: {mismatches} mismatches (exact equality)"),
    );
}

fn ettm2_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/ETTm2.csv")
}

fn ettm2_config(path: PathBuf) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.data.name = "ETTm2".into();
    cfg.data.path = Some(path);
    cfg.data.timestamp_column = Some("date".into());
    cfg.split = SplitSpec::new([0.6, 0.2, 0.2], Some(57_600)).unwrap();
    cfg.model.backbone = BackboneConfig::dlinear();
    cfg.train.lookback = 336;
    cfg.train.max_epochs = 20;
    cfg.train.early_stop_patience = Some(3);
    cfg.bench.horizons = vec![96];
    cfg.bench.seeds = (0..5).collect();
    cfg
}

fn c5_c7a_ettm2(s: &mut Suite) {
    let path = ettm2_path();
    if !path.exists() {
        s.record(
            "C5 ETTm2 reproduction",
            Status::Blocked,
            format!("{} not present; the dataset is not shipped", path.display()),
        );
        return;
    }
    let cfg = ettm2_config(path);
    let data = cfg.prepare().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let records = run_experiment_on(&cfg, &data, dir.path()).unwrap();
    let failed = records
        .iter()
        .filter(|r| r.status == RunStatus::Failed)
        .count();
    let row = &summarize(&records).unwrap()[0];
    let base = row.baseline.mse.map_or(f64::NAN, |m| m.mean);
    let hyper = row.hn_mvts.mse.map_or(f64::NAN, |m| m.mean);
    let rel = (base - 0.1641).abs() / 0.1641;
    s.check(
        "C5a ETTm2 baseline MSE",
        failed == 0 && rel <= 0.15,
        format!("baseline {base:.4} vs 0.1641 (|rel| {rel:.3}, tol 0.15); {failed} failed runs"),
    );
    s.record(
        "C5b ETTm2 HN-MVTS <= baseline",
        Status::Report(hyper <= base),
        format!("hn_mvts {hyper:.4} vs baseline {base:.4} (soft target)"),
    );
    let ratio = row.timing_ratio.unwrap_or(f64::NAN);
    s.check(
        "C7a training time per epoch",
        ratio <= 1.5,
        format!("ETTm2 run: ratio {ratio:.3} (tol 1.5)"),
    );
}

/// Without the dataset: the same ratio on ETTm2-shaped synthetic data.
fn c7a_proxy(s: &mut Suite) {
    let mut cfg = ExperimentConfig::default();
    cfg.data.synthetic.groups = vec![0, 0, 0, 1, 1, 1, 1];
    cfg.data.synthetic.length = 4800;
    cfg.split = SplitSpec::new([0.6, 0.2, 0.2], None).unwrap();
    cfg.train.max_epochs = 2;
    cfg.bench.seeds = vec![0];
    let data = cfg.prepare().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let records = run_experiment_on(&cfg, &data, dir.path()).unwrap();
    let row = &summarize(&records).unwrap()[0];
    let ratio = row.timing_ratio.unwrap_or(f64::NAN);
    let secs =
        |v: &hnmvts::bench::summary::VariantStats| v.sec_per_epoch.map_or(f64::NAN, |m| m.mean);
    s.record(
        "C7a training time per epoch",
        Status::Report(ratio <= 1.5),
        format!(
            "proxy N=7 T=336 H=96 B=64, {} train windows: baseline {:.2} s/epoch, hn_mvts {:.2} s/epoch, ratio {ratio:.3} (tol 1.5)",
            WindowSet::new(data.train.clone(), 336, 96).map_or(0, |w| w.len()),
            secs(&row.baseline),
            secs(&row.hn_mvts),
        ),
    );
}

type Criterion = fn(&mut Suite);

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    // `cargo test` forwards harness flags; only our own flag matters.
    let full = args.iter().any(|a| a == "--full");
    let filter: Vec<&String> = args.iter().filter(|a| !a.starts_with('-')).collect();
    if args.iter().any(|a| a == "--list") {
        return;
    }
    let mut suite = Suite { lines: Vec::new() };
    let started = Instant::now();
    let criteria: [(&str, Criterion); 7] = [
        ("c1", c1_bake_equivalence),
        ("c2", c2_gradient_check),
        ("c3", c3_param_count),
        ("c4", c4_tying_and_independence),
        ("c6", c6_embedding_groups),
        ("c7b", c7b_inference_time),
        ("c8", c8_wilcoxon_oracle),
    ];
    for (name, run) in criteria {
        if filter.is_empty() || filter.iter().any(|f| name.contains(f.as_str())) {
            run(&mut suite);
        }
    }
    if full {
        c5_c7a_ettm2(&mut suite);
    } else if filter.is_empty() || filter.iter().any(|f| "c5 c7a".contains(f.as_str())) {
        suite.record(
            "C5 ETTm2 reproduction",
            Status::Blocked,
            format!("needs {} and --full; not run", ettm2_path().display()),
        );
        c7a_proxy(&mut suite);
    }
    let count = |f: fn(Status) -> bool| suite.lines.iter().filter(|(_, s)| f(*s)).count();
    let failed = count(|s| s == Status::Fail);
    println!(
        "\nacceptance: {} passed, {failed} failed, {} reported, {} blocked in {:.1}s",
        count(|s| s == Status::Pass),
        count(|s| matches!(s, Status::Report(_))),
        count(|s| s == Status::Blocked),
        started.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
