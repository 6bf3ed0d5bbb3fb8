//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use cvit::analytics::{ablate, apf, compare_to_backbone, load_apf_table, AblationGrid, CostReport};
use cvit::ccffn::{ccffn_flops, ccffn_param_count, split_channels, CcFfn, CcFfnConfig, ChunkFfn};
use cvit::model::checkpoint::{from_bytes, to_bytes};
use cvit::model::{apply_weight_sharing, load_checkpoint, predict, save_checkpoint};
use cvit::nn::{self, Layer, Mode};
use cvit::train::{
    gradcheck_module, train_loop, GradcheckTarget, KdParams, OptimConfig, Teacher, ToyConfig, ToyDataset,
};
use cvit::{CViTModel, Error, ModelConfig, RngState, Tensor, Var};

/// Relative tolerance on parameter and FLOP totals against the reference figures.
const COST_TOL: f64 = 0.12;
const REFERENCE_COSTS: [(&str, f64, f64); 4] = [
    ("S", 1.9, 67.0),
    ("M", 3.5, 173.0),
    ("L", 7.0, 249.0),
    ("XL", 9.8, 435.0),
];
const PARAM_REDUCTION_PCT: (f64, f64) = (15.0, 25.0);
const FLOP_REDUCTION_PCT: (f64, f64) = (10.0, 20.0);
const APF_TOL: f64 = 0.05;
const APF_NAMED: [(&str, f64); 4] = [("CViT-M", 31.2), ("CViT-L", 30.5), ("CViT-XL", 28.6), ("CoCa", 24.9)];
const SPLIT_CASES: usize = 1000;
const FUSION_TOL: f64 = 1e-4;
const TOY_ACC: f64 = 0.95;
const TOY_EPOCHS: usize = 20;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(value: f64, target: f64, rel: f64) -> bool {
    (value - target).abs() <= rel * target
}

fn preset_costs() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, params_m, mflops) in REFERENCE_COSTS {
        let m = CViTModel::<f32>::build(&ModelConfig::preset(name).map_err(|e| e.to_string())?, RngState::new(0))
            .map_err(|e| e.to_string())?;
        let r = m.cost_report(224).map_err(|e| e.to_string())?;
        let good = within(r.mparams(), params_m, COST_TOL) && within(r.mflops(), mflops, COST_TOL);
        ok &= good;
        parts.push(format!(
            "{name} {:.2}M/{:.1}MF vs {params_m}/{mflops}{}",
            r.mparams(),
            r.mflops(),
            if good { "" } else { " OUT" }
        ));
    }
    check(ok, format!("{} (tol ±{:.0}%)", parts.join(", "), COST_TOL * 100.0))
}

fn backbone_reduction() -> Outcome {
    let l = ModelConfig::preset("L").map_err(|e| e.to_string())?;
    let r = compare_to_backbone(&l, &l.backbone(), 224).map_err(|e| e.to_string())?;
    let ok = (PARAM_REDUCTION_PCT.0..=PARAM_REDUCTION_PCT.1).contains(&r.param_reduction_pct)
        && (FLOP_REDUCTION_PCT.0..=FLOP_REDUCTION_PCT.1).contains(&r.flop_reduction_pct);
    check(
        ok,
        format!(
            "params -{:.1}% in {:?}, flops -{:.1}% in {:?}",
            r.param_reduction_pct, PARAM_REDUCTION_PCT, r.flop_reduction_pct, FLOP_REDUCTION_PCT
        ),
    )
}

fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn apf_table() -> Outcome {
    let rows = load_apf_table(data_path("apf_reference.csv")).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    let mut checked = 0;
    for r in &rows {
        let printed = r.apf.ok_or_else(|| format!("{} has no printed APF", r.model))?;
        let got = apf(r.top1, r.mflops).map_err(|e| e.to_string())?.apf;
        worst = worst.max((got - printed).abs());
        checked += 1;
    }
    for (name, want) in APF_NAMED {
        let r = rows
            .iter()
            .find(|r| r.model == name)
            .ok_or_else(|| format!("{name} missing from table"))?;
        let got = apf(r.top1, r.mflops).map_err(|e| e.to_string())?.apf;
        if (got - want).abs() > APF_TOL {
            return Err(format!("{name}: {got:.3} vs {want}"));
        }
    }
    check(
        worst <= APF_TOL,
        format!("{checked} rows, max |Δ| {worst:.4} (tol {APF_TOL})"),
    )
}

fn randomize<L: Layer<f64>>(layer: &L, seed: u64) {
    let mut g = RngState::new(seed).generator();
    for (_, p) in nn::parameters(layer) {
        p.set_value(g.normal_tensor(&p.shape(), 0.5)).unwrap();
    }
}

fn ccffn_suite() -> Outcome {
    let root = RngState::new(42);
    let mut g = root.split(0).generator();
    for case in 0..SPLIT_CASES {
        let n = 1 + g.below(4);
        let shape = [1 + g.below(3), n * (1 + g.below(6)), 1 + g.below(5), 1 + g.below(5)];
        let x = g.normal_tensor::<f32>(&shape, 1.0);
        let parts = split_channels(&x, n).map_err(|e| e.to_string())?;
        let refs: Vec<&Tensor<f32>> = parts.iter().collect();
        if !Tensor::concat_channels(&refs).map_err(|e| e.to_string())?.bit_eq(&x) {
            return Err(format!("split/concat round trip failed in case {case} {shape:?}"));
        }
    }

    let mut causal = 0;
    for trial in 0..20u64 {
        let n = 2 + g.below(3);
        let c = n * (1 + g.below(4));
        let ffn = CcFfn::<f64>::new(CcFfnConfig::new(c).with_chunks(n), &mut g).map_err(|e| e.to_string())?;
        randomize(&ffn, trial);
        nn::set_mode(&ffn, Mode::Eval);
        let x = g.normal_tensor::<f64>(&[2, c, 3, 3], 1.0);
        let j = g.below(n);
        let k = c / n;
        let mut y = x.clone();
        let hw = 9;
        for b in 0..2 {
            for ch in j * k..(j + 1) * k {
                for p in 0..hw {
                    y.data_mut()[(b * c + ch) * hw + p] += 1.0;
                }
            }
        }
        let a = ffn.forward_chunks(&Var::constant(x)).map_err(|e| e.to_string())?;
        let b = ffn.forward_chunks(&Var::constant(y)).map_err(|e| e.to_string())?;
        for i in 0..n {
            let same = a[i].value().bit_eq(&b[i].value());
            if i < j && !same {
                return Err(format!("chunk {i} changed when chunk {j} was perturbed"));
            }
        }
        causal += 1;
    }

    for seed in 0..10u64 {
        let c = 4 * (1 + seed as usize);
        let cfg = CcFfnConfig::new(c).with_chunks(1);
        let mut ga = RngState::new(seed).generator();
        let mut gb = RngState::new(seed).generator();
        let ccffn = CcFfn::<f32>::new(cfg, &mut ga).map_err(|e| e.to_string())?;
        let plain = ChunkFfn::<f32>::new(c, cfg.hidden(), &mut gb).map_err(|e| e.to_string())?;
        let x = Var::constant(g.normal_tensor::<f32>(&[2, c, 4, 4], 1.0));
        let (ya, yb) = (
            ccffn.forward(&x).map_err(|e| e.to_string())?,
            plain.forward(&x).map_err(|e| e.to_string())?,
        );
        if !ya.value().bit_eq(&yb.value()) {
            return Err(format!("n=1 differs from a plain FFN at C={c}"));
        }
    }

    let mut sweeps = 0;
    for _ in 0..200 {
        let n = [1, 2, 3, 4, 6, 8][g.below(6)];
        let c = n * (1 + g.below(24));
        let cfg = CcFfnConfig {
            channels: c,
            chunks: n,
            expansion: [1.0, 2.0, 2.5, 3.0, 4.0][g.below(5)],
            cascade: g.below(2) == 0,
            projection: g.below(2) == 0,
        };
        let (h, w) = (1 + g.below(14), 1 + g.below(14));
        let ffn = CcFfn::<f32>::new(cfg, &mut g).map_err(|e| e.to_string())?;
        let r = CostReport::of(&ffn, (c, h, w)).map_err(|e| e.to_string())?;
        if r.total_params() != ccffn_param_count(&cfg) || r.total_flops() != ccffn_flops(&cfg, h, w) {
            return Err(format!(
                "{cfg:?} at {h}x{w}: counted {}/{} closed form {}/{}",
                r.total_params(),
                r.total_flops(),
                ccffn_param_count(&cfg),
                ccffn_flops(&cfg, h, w)
            ));
        }
        sweeps += 1;
    }
    Ok(format!(
        "{SPLIT_CASES} round trips, {causal} causality trials, n=1 bitwise, {sweeps} closed-form configs exact"
    ))
}

fn gradient_checks() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for t in GradcheckTarget::ALL {
        let r = gradcheck_module(t, 8, 0).map_err(|e| e.to_string())?;
        let good = r.max_rel_err < t.tolerance();
        ok &= good;
        parts.push(format!(
            "{} {:.1e}<{:.0e}{}",
            t.name(),
            r.max_rel_err,
            t.tolerance(),
            if good {
                String::new()
            } else {
                format!(" FAIL at {}", r.worst)
            }
        ));
    }
    check(ok, parts.join(", "))
}

fn fusion_config() -> ModelConfig {
    ModelConfig {
        name: "fusion".into(),
        depths: [1, 1, 1],
        dims: [8, 16, 16],
        heads: [2, 2, 2],
        num_classes: 4,
        image_size: 64,
        ..ModelConfig::preset("S").unwrap()
    }
}

fn bn_fusion() -> Outcome {
    let m = CViTModel::<f32>::build(&fusion_config(), RngState::new(3)).map_err(|e| e.to_string())?;
    let mut g = RngState::new(4).generator();
    m.set_mode(Mode::Train);
    for _ in 0..3 {
        let x = Var::constant(g.normal_tensor::<f32>(&[4, 3, 64, 64], 1.0));
        m.forward(&x).map_err(|e| e.to_string())?;
    }
    m.set_mode(Mode::Eval);
    let fused = m.fused().map_err(|e| e.to_string())?;
    let x = g.normal_tensor::<f32>(&[4, 3, 64, 64], 1.0);
    let a = predict(&m, &x).map_err(|e| e.to_string())?;
    let b = predict(&fused, &x).map_err(|e| e.to_string())?;
    let diff = a.max_abs_diff(&b).map_err(|e| e.to_string())?;
    check(
        diff < FUSION_TOL,
        format!("max |Δlogit| {diff:.2e} (tol {FUSION_TOL:.0e})"),
    )
}

fn toy_data(seed: u64) -> ToyDataset<f32> {
    ToyDataset::generate(ToyConfig {
        seed,
        ..ToyConfig::default()
    })
    .unwrap()
}

fn toy_optim() -> OptimConfig {
    OptimConfig {
        epochs: TOY_EPOCHS,
        ..OptimConfig::default()
    }
}

fn toy_learning() -> Outcome {
    let data = toy_data(0);
    let opt = toy_optim();
    let build = |name: &str| CViTModel::<f32>::build(&ModelConfig::preset(name).unwrap(), RngState::new(1)).unwrap();

    let teacher = build("tiny-L");
    let t_trace = train_loop(&teacher, &data, &opt, None, RngState::new(2)).map_err(|e| e.to_string())?;

    let plain = build("tiny-S");
    let p_trace = train_loop(&plain, &data, &opt, None, RngState::new(2)).map_err(|e| e.to_string())?;
    let student = build("tiny-S");
    let kd = Teacher {
        model: &teacher,
        kd: KdParams::default(),
    };
    let k_trace = train_loop(&student, &data, &opt, Some(kd), RngState::new(2)).map_err(|e| e.to_string())?;

    let (p, k) = (p_trace.final_val_acc(), k_trace.final_val_acc());
    let ok = p >= TOY_ACC && k >= p;
    check(
        ok,
        format!(
            "tiny-S {:.3} (≥{TOY_ACC}) after {TOY_EPOCHS} epochs, KD from tiny-L ({:.3}) {:.3} ≥ {:.3}",
            p,
            t_trace.final_val_acc(),
            k,
            p
        ),
    )
}

fn ablation_directions() -> Outcome {
    let base = ModelConfig::preset("S").map_err(|e| e.to_string())?;
    let row = |grid: &str| -> Result<(u64, u64), String> {
        let g: AblationGrid = grid.parse().map_err(|e: Error| e.to_string())?;
        let r = ablate(&base, &g, 224).remove(0);
        match (r.params, r.flops, r.error) {
            (Some(p), Some(f), None) => Ok((p, f)),
            (_, _, e) => Err(format!("{grid}: {e:?}")),
        }
    };
    let n2 = row("chunks=2 ratio=2.5")?;
    let n4 = row("chunks=4 ratio=2.5")?;
    let e4 = row("chunks=2 ratio=4")?;
    let shared = row("chunks=2 ratio=2.5 share=on")?;
    let no_cascade = row("chunks=2 ratio=2.5 cascade=off")?;
    let checks = [
        ("n4<n2", n4.0 < n2.0 && n4.1 < n2.1),
        ("e4>e2.5", e4.0 > n2.0 && e4.1 > n2.1),
        ("share reduces unique params", shared.0 < n2.0),
        ("cascade off same counts", no_cascade == n2),
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    check(
        failed.is_empty(),
        format!(
            "params/flops n2 {:?} n4 {:?} e4 {:?} shared {} cascade-off {:?}{}",
            n2,
            n4,
            e4,
            shared.0,
            no_cascade,
            if failed.is_empty() {
                String::new()
            } else {
                format!("; failed: {}", failed.join(", "))
            }
        ),
    )
}

/// Byte ranges of each tensor record: `(start, name, rank_pos, tag_pos, end)`.
fn records(bytes: &[u8]) -> Vec<(usize, String, usize, usize, usize)> {
    let u32_at = |p: usize| u32::from_le_bytes(bytes[p..p + 4].try_into().unwrap()) as usize;
    let u64_at = |p: usize| u64::from_le_bytes(bytes[p..p + 8].try_into().unwrap()) as usize;
    let count = u32_at(8);
    let mut pos = 16 + u32_at(12);
    let mut out = Vec::new();
    for _ in 0..count {
        let start = pos;
        let len = u32_at(pos);
        let name = String::from_utf8(bytes[pos + 4..pos + 4 + len].to_vec()).unwrap();
        let rank_pos = pos + 4 + len;
        let rank = u32_at(rank_pos);
        let numel: usize = (0..rank).map(|i| u64_at(rank_pos + 4 + 8 * i)).product();
        let tag_pos = rank_pos + 4 + 8 * rank;
        pos = tag_pos
            + 1
            + match bytes[tag_pos] {
                0 => 4 * numel,
                2 => 8 * numel,
                _ => 4 + u32_at(tag_pos + 1),
            };
        out.push((start, name, rank_pos, tag_pos, pos));
    }
    out
}

fn determinism() -> Outcome {
    let cfg = ModelConfig::preset("tiny-S").map_err(|e| e.to_string())?;
    let build = || CViTModel::<f32>::build(&cfg, RngState::new(11)).unwrap();
    let (a, b) = (build(), build());
    let bytes = to_bytes(&a).map_err(|e| e.to_string())?;
    if bytes != to_bytes(&b).map_err(|e| e.to_string())? {
        return Err("same-seed builds differ".into());
    }

    let data = ToyDataset::<f32>::generate(ToyConfig {
        train_per_class: 8,
        val_per_class: 4,
        ..ToyConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let opt = OptimConfig {
        epochs: 2,
        batch_size: 8,
        ..OptimConfig::default()
    };
    let ta = train_loop(&a, &data, &opt, None, RngState::new(5)).map_err(|e| e.to_string())?;
    let tb = train_loop(&b, &data, &opt, None, RngState::new(5)).map_err(|e| e.to_string())?;
    let bits = |t: &cvit::train::TrainTrace| t.records.iter().map(|r| r.train_loss.to_bits()).collect::<Vec<_>>();
    if bits(&ta) != bits(&tb) || to_bytes(&a).unwrap() != to_bytes(&b).unwrap() {
        return Err("same-seed training differs".into());
    }

    let x = RngState::new(6).generator().normal_tensor::<f32>(&[3, 3, 64, 64], 1.0);
    let ya = predict(&a, &x).map_err(|e| e.to_string())?;
    if !ya.bit_eq(&predict(&a, &x).map_err(|e| e.to_string())?) {
        return Err("repeated inference differs".into());
    }

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("model.cvit");
    save_checkpoint(&a, &path).map_err(|e| e.to_string())?;
    let back = load_checkpoint::<f32>(&path).map_err(|e| e.to_string())?;
    if !ya.bit_eq(&predict(&back, &x).map_err(|e| e.to_string())?) {
        return Err("checkpoint round trip changed the logits".into());
    }

    let bytes = to_bytes(&a).unwrap();
    let tiny_l = ModelConfig::preset("tiny-L").map_err(|e| e.to_string())?;
    let shared = to_bytes(&apply_weight_sharing(
        CViTModel::<f32>::build(&tiny_l, RngState::new(11)).unwrap(),
    ))
    .unwrap();
    let recs = records(&bytes);
    let first = &recs[0];
    let last = recs.last().unwrap();
    let mut cases: Vec<(&str, Vec<u8>)> = Vec::new();
    let mut v = bytes.clone();
    v[0] = b'Z';
    cases.push(("magic", v));
    let mut v = bytes.clone();
    v[4] = 77;
    cases.push(("version", v));
    cases.push(("truncated", bytes[..bytes.len() / 2].to_vec()));
    let mut v = bytes.clone();
    v[first.2 + 4] ^= 1;
    cases.push(("shape", v));
    let mut v = bytes[..last.0].to_vec();
    v[8..12].copy_from_slice(&(recs.len() as u32 - 1).to_le_bytes());
    cases.push(("missing", v));
    let mut v = bytes.clone();
    v[first.0 + 4] = b'#';
    cases.push(("unknown", v));
    let srecs = records(&shared);
    let r = srecs
        .iter()
        .find(|r| shared[r.3] == 1)
        .ok_or("no shared reference written")?;
    let mut v = shared.clone();
    let target_end = r.4;
    v[target_end - 1] = b'#';
    cases.push(("reference", v));
    let mut v = bytes.clone();
    v[first.3] = 7;
    cases.push(("dtype", v));
    let mut v = bytes.clone();
    v.push(0);
    cases.push(("trailing", v));

    let mut codes = Vec::new();
    for (what, data) in &cases {
        match from_bytes::<f32>(data) {
            Err(Error::Checkpoint(e)) => codes.push((*what, e.code())),
            Err(other) => return Err(format!("{what}: non-checkpoint error {other}")),
            Ok(_) => return Err(format!("{what}: corrupted checkpoint loaded")),
        }
    }
    let mut distinct: Vec<u8> = codes.iter().map(|c| c.1).collect();
    distinct.sort();
    distinct.dedup();
    check(
        distinct.len() == cases.len(),
        format!(
            "build/train/infer/checkpoint bit-identical; corruption codes {}",
            codes
                .iter()
                .map(|(w, c)| format!("{w}={c}"))
                .collect::<Vec<_>>()
                .join(" ")
        ),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("preset-costs", preset_costs),
        ("backbone-reduction", backbone_reduction),
        ("apf-table", apf_table),
        ("ccffn-suite", ccffn_suite),
        ("gradient-checks", gradient_checks),
        ("bn-fusion", bn_fusion),
        ("toy-learning", toy_learning),
        ("ablation-directions", ablation_directions),
        ("determinism-persistence", determinism),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if !only.is_empty() && !only.iter().any(|o| name.contains(o.as_str())) {
            continue;
        }
        let t = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("PASS {} {name}: {d} [{secs:.1}s]", i + 1),
            Err(d) => {
                failed += 1;
                println!("FAIL {} {name}: {d} [{secs:.1}s]", i + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
