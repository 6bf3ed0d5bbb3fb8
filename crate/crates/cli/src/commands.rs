use std::fmt;
use std::path::Path;

use cvit::analytics::{ablate, apf, compare_to_backbone, emit_report, load_apf_table, AblationGrid, AblationRow};
use cvit::model::{load_checkpoint, predict, save_checkpoint, top_k};
use cvit::train::{
    gradcheck_module, train_loop, GradcheckTarget, KdParams, OptimConfig, Teacher, ToyConfig, ToyDataset, TrainTrace,
};
use cvit::{CViTModel, Error, ModelConfig, RngState, Tensor};
use serde_json::{json, Value};

use crate::args::*;
use crate::output::{Format, Rows};
use crate::ppm;

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_NUMERIC: u8 = 4;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn data(message: impl fmt::Display) -> Self {
        Self {
            code: EXIT_DATA,
            message: message.to_string(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::NonFinite { .. } => EXIT_NUMERIC,
            Error::Checkpoint(_) | Error::Io(_) | Error::Shape { .. } | Error::Contract(_) => EXIT_DATA,
            Error::Config(_) | Error::Domain(_) | Error::Divisibility { .. } => EXIT_USAGE,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

/// Text for stdout plus the process exit code.
pub struct Outcome {
    pub stdout: String,
    pub code: u8,
}

impl From<String> for Outcome {
    fn from(stdout: String) -> Self {
        Self { stdout, code: 0 }
    }
}

type Run = Result<Outcome, Failure>;

pub fn run(cli: &Cli) -> Run {
    match &cli.command {
        Command::Describe(a) => describe(cli, a),
        Command::Flops(a) => flops(cli, a),
        Command::Apf(a) => apf_cmd(cli, a),
        Command::Infer(a) => infer(cli, a),
        Command::TrainToy(a) => train_toy(cli, a),
        Command::Distill(a) => distill(cli, a),
        Command::Gradcheck(a) => gradcheck(cli, a),
        Command::Ablate(a) => ablate_cmd(cli, a),
        Command::Checkpoint(CheckpointCommand::Init(a)) => checkpoint_init(cli, a),
        Command::Checkpoint(CheckpointCommand::Inspect(a)) => checkpoint_inspect(cli, a),
    }
}

/// Print the fully resolved settings of this run as one JSON line on stderr.
fn announce(cli: &Cli, command: &str, settings: Value) {
    let line = json!({
        "command": command,
        "seed": cli.seed,
        "threads": cli.threads.map_or_else(rayon::current_num_threads, usize::from),
        "format": format!("{:?}", cli.format).to_lowercase(),
        "settings": settings,
    });
    eprintln!("{line}");
}

fn resolve_model(cli: &Cli, preset: Option<&str>, default: &str) -> Result<ModelConfig, Failure> {
    match (&cli.config, preset) {
        (Some(_), Some(_)) => Err(Failure::usage("--config and --preset are mutually exclusive")),
        (Some(path), None) => Ok(ModelConfig::load(path)?),
        (None, p) => Ok(ModelConfig::preset(p.unwrap_or(default))?),
    }
}

fn to_value(v: &impl serde::Serialize) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

fn pretty(v: &Value) -> String {
    serde_json::to_string_pretty(v).unwrap_or_default() + "\n"
}

fn describe(cli: &Cli, a: &DescribeArgs) -> Run {
    let cfg = resolve_model(cli, a.preset.as_deref(), "S")?;
    let input = a.input.unwrap_or(cfg.image_size);
    let backbone = match &a.backbone {
        Some(name) => Some(ModelConfig::preset(name)?),
        None if a.compare => Some(cfg.backbone()),
        None => None,
    };
    announce(
        cli,
        "describe",
        json!({ "model": cfg, "input": input, "backbone": backbone, "top1": a.top1 }),
    );

    let model = CViTModel::<f32>::build(&cfg, RngState::new(cli.seed))?;
    let report = model.cost_report(input)?;
    let reduction = backbone
        .as_ref()
        .map(|b| compare_to_backbone(&cfg, b, input))
        .transpose()?;
    let apf_record = a.top1.map(|t| apf(t, report.mflops())).transpose()?;

    let out = match cli.format {
        Format::Csv => emit_report(&report, cli.format.into())?,
        Format::Json => {
            let body: Value = serde_json::from_str(&emit_report(&report, cli.format.into())?)
                .map_err(|e| Failure::data(format!("report json: {e}")))?;
            pretty(&json!({
                "model": cfg,
                "report": body,
                "reduction": reduction,
                "apf": apf_record,
            }))
        }
        Format::Table => {
            let mut s = format!("model {} at {input}x{input}\n", cfg.name);
            s.push_str(&emit_report(&report, cli.format.into())?);
            if let (Some(r), Some(b)) = (&reduction, &backbone) {
                s.push_str(&format!(
                    "vs {}: params {} -> {} ({:.1}% fewer), flops {} -> {} ({:.1}% fewer)\n",
                    b.name,
                    r.backbone_params,
                    r.cvit_params,
                    r.param_reduction_pct,
                    r.backbone_flops,
                    r.cvit_flops,
                    r.flop_reduction_pct
                ));
            }
            match apf_record {
                Some(r) => s.push_str(&format!(
                    "APF {:.1} (top-1 {}%, {:.1} MFLOPs)\n",
                    r.apf, r.top1, r.mflops
                )),
                None => s.push_str("APF n/a: pass --top1 <percent> to compute it\n"),
            }
            s
        }
    };
    Ok(out.into())
}

fn flops(cli: &Cli, a: &FlopsArgs) -> Run {
    let cfg = resolve_model(cli, a.preset.as_deref(), "S")?;
    let input = a.input.unwrap_or(cfg.image_size);
    announce(cli, "flops", json!({ "model": cfg, "input": input }));
    let model = CViTModel::<f32>::build(&cfg, RngState::new(cli.seed))?;
    let r = model.cost_report(input)?;
    let t = r.totals();
    let mut rows = Rows::new(vec![
        "model",
        "input",
        "params",
        "params_per_use",
        "buffers",
        "flops",
        "strict_flops",
        "mparams",
        "mflops",
    ]);
    rows.push(vec![
        json!(cfg.name),
        json!(input),
        json!(t.unique_params),
        json!(t.params),
        json!(t.buffers),
        json!(t.flops),
        json!(r.total_flops_strict()),
        json!(t.mparams),
        json!(t.mflops),
    ]);
    Ok(rows.render(cli.format).into())
}

fn find_key<'a>(v: &'a Value, key: &str) -> Option<&'a Value> {
    match v {
        Value::Object(m) => m.get(key).or_else(|| m.values().find_map(|x| find_key(x, key))),
        Value::Array(xs) => xs.iter().find_map(|x| find_key(x, key)),
        _ => None,
    }
}

fn apf_cmd(cli: &Cli, a: &ApfArgs) -> Run {
    announce(cli, "apf", to_value(a));
    let mut rows = Rows::new(vec!["model", "top1", "mflops", "apf", "printed", "delta"]);
    if let Some(path) = &a.table {
        for r in load_apf_table(path).map_err(Failure::data)? {
            let ours = apf(r.top1, r.mflops)?;
            rows.push(vec![
                json!(r.model),
                json!(r.top1),
                json!(r.mflops),
                json!(ours.apf),
                json!(r.apf),
                json!(r.apf.map(|p| ours.apf - p)),
            ]);
        }
        return Ok(rows.render(cli.format).into());
    }
    let top1 = a
        .top1
        .ok_or_else(|| Failure::usage("--top1 is required unless --table is given"))?;
    let (name, mflops) = match (&a.describe, a.mflops) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
            let v: Value =
                serde_json::from_str(&text).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
            let m = find_key(&v, "mflops")
                .and_then(Value::as_f64)
                .ok_or_else(|| Failure::data(format!("{}: no `mflops` field", path.display())))?;
            let name = find_key(&v, "name")
                .or_else(|| find_key(&v, "model"))
                .and_then(Value::as_str);
            (name.unwrap_or("model").to_string(), m)
        }
        (None, Some(m)) => ("model".to_string(), m),
        (None, None) => return Err(Failure::usage("one of --mflops, --describe or --table is required")),
    };
    let r = apf(top1, mflops)?;
    rows.push(vec![
        json!(name),
        json!(top1),
        json!(mflops),
        json!(r.apf),
        Value::Null,
        Value::Null,
    ]);
    Ok(rows.render(cli.format).into())
}

fn load_model(path: &Path) -> Result<CViTModel<f32>, Failure> {
    load_checkpoint::<f32>(path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))
}

fn infer(cli: &Cli, a: &InferArgs) -> Run {
    let model = match &a.checkpoint {
        Some(path) => {
            let m = load_model(path)?;
            if cli.config.is_some() || a.preset.is_some() {
                let want = resolve_model(cli, a.preset.as_deref(), "S")?;
                if want != m.config {
                    return Err(Failure::data(format!(
                        "checkpoint {} holds model `{}`, which does not match the requested config `{}`",
                        path.display(),
                        m.config.name,
                        want.name
                    )));
                }
            }
            m
        }
        None => CViTModel::<f32>::build(&resolve_model(cli, a.preset.as_deref(), "S")?, RngState::new(cli.seed))?,
    };
    let size = model.config.image_size;
    announce(cli, "infer", json!({ "model": model.config, "args": to_value(a) }));

    let chw = match &a.image {
        Some(path) => {
            let bytes = std::fs::read(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
            let img = ppm::decode(&bytes).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
            ppm::to_chw(&img, size)
        }
        None => RngState::new(cli.seed)
            .split(7)
            .generator()
            .normal_tensor::<f32>(&[3, size, size], 1.0)
            .data()
            .to_vec(),
    };
    let images = Tensor::new([1, 3, size, size], chw)?;
    let logits = predict(&model, &images)?;
    let row = logits.data();
    if row.iter().any(|v| !v.is_finite()) {
        return Err(Failure {
            code: EXIT_NUMERIC,
            message: "model produced non-finite logits".into(),
        });
    }
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let exp: Vec<f64> = row.iter().map(|&v| f64::from(v - max).exp()).collect();
    let total: f64 = exp.iter().sum();

    let mut rows = Rows::new(vec!["rank", "class", "logit", "prob"]);
    for (rank, (class, logit)) in top_k(row, a.top_k).into_iter().enumerate() {
        rows.push(vec![
            json!(rank + 1),
            json!(class),
            json!(logit),
            json!(exp[class] / total),
        ]);
    }
    let out = match cli.format {
        Format::Json => pretty(&json!({ "top_k": rows.to_json(), "logits": row })),
        f => rows.render(f),
    };
    Ok(out.into())
}

fn toy_config(cli: &Cli, cfg: &mut ModelConfig, toy: &ToyArgs) -> ToyConfig {
    let classes = toy.classes.unwrap_or(cfg.num_classes);
    cfg.num_classes = classes;
    ToyConfig {
        classes,
        train_per_class: toy.train_per_class,
        val_per_class: toy.val_per_class,
        image_size: cfg.image_size,
        noise: toy.noise,
        seed: cli.seed,
    }
}

fn optim_config(o: &OptimArgs) -> OptimConfig {
    OptimConfig {
        max_lr: o.lr,
        min_lr: o.min_lr,
        weight_decay: o.weight_decay,
        epochs: o.epochs,
        batch_size: o.batch_size,
        ..OptimConfig::default()
    }
}

fn trace_rows(trace: &TrainTrace) -> Rows {
    let mut rows = Rows::new(vec!["epoch", "lr", "train_loss", "val_acc"]);
    for r in &trace.records {
        rows.push(vec![json!(r.epoch), json!(r.lr), json!(r.train_loss), json!(r.val_acc)]);
    }
    rows
}

fn train_toy(cli: &Cli, a: &TrainToyArgs) -> Run {
    let mut cfg = resolve_model(cli, a.preset.as_deref(), "tiny-S")?;
    let toy = toy_config(cli, &mut cfg, &a.toy);
    let opt = optim_config(&a.optim);
    cfg.validate()?;
    announce(
        cli,
        "train-toy",
        json!({ "model": cfg, "data": toy, "optim": opt, "save": a.save }),
    );

    let data = ToyDataset::<f32>::generate(toy)?;
    let model = CViTModel::<f32>::build(&cfg, RngState::new(cli.seed))?;
    let trace = train_loop(&model, &data, &opt, None, RngState::new(cli.seed).split(1))?;
    if let Some(path) = &a.save {
        save_checkpoint(&model, path)?;
    }
    let out = match cli.format {
        Format::Json => pretty(&json!({
            "model": cfg.name,
            "trace": trace.records,
            "final_val_acc": trace.final_val_acc(),
            "best_val_acc": trace.best_val_acc(),
        })),
        Format::Csv => trace_rows(&trace).render(Format::Csv),
        Format::Table => {
            let mut s = trace_rows(&trace).render(Format::Table);
            s.push_str(&format!(
                "{}: final val acc {:.3}, best {:.3}\n",
                cfg.name,
                trace.final_val_acc(),
                trace.best_val_acc()
            ));
            s
        }
    };
    Ok(out.into())
}

/// Default teacher for a tiny student: the next larger tiny preset.
fn default_teacher(student: &str) -> Option<&'static str> {
    match student {
        "tiny-S" | "tiny-M" => Some("tiny-L"),
        "tiny-L" => Some("tiny-XL"),
        _ => None,
    }
}

fn distill(cli: &Cli, a: &DistillArgs) -> Run {
    let mut student_cfg = resolve_model(cli, a.student.as_deref(), "tiny-S")?;
    let toy = toy_config(cli, &mut student_cfg, &a.toy);
    let opt = optim_config(&a.optim);
    let kd = KdParams {
        alpha: a.alpha,
        temperature: a.temperature,
    };
    kd.validate()?;
    student_cfg.validate()?;

    let data = ToyDataset::<f32>::generate(toy)?;
    let teacher = match &a.teacher_checkpoint {
        Some(path) => load_model(path)?,
        None => {
            let name = match &a.teacher {
                Some(t) => t.clone(),
                None => default_teacher(&student_cfg.name).map(str::to_string).ok_or_else(|| {
                    Failure::usage(format!("no default teacher for `{}`; pass --teacher", student_cfg.name))
                })?,
            };
            let mut cfg = ModelConfig::preset(&name)?;
            cfg.num_classes = toy.classes;
            cfg.image_size = student_cfg.image_size;
            cfg.validate()?;
            CViTModel::<f32>::build(&cfg, RngState::new(cli.seed).split(2))?
        }
    };
    announce(
        cli,
        "distill",
        json!({ "student": student_cfg, "teacher": teacher.config, "data": toy, "optim": opt, "kd": kd, "save": a.save }),
    );
    if teacher.config.image_size != student_cfg.image_size {
        return Err(Failure::usage(format!(
            "teacher expects {}px images but the student uses {}px",
            teacher.config.image_size, student_cfg.image_size
        )));
    }
    let shuffle = RngState::new(cli.seed).split(1);
    let teacher_trace = match a.teacher_checkpoint {
        Some(_) => None,
        None => Some(train_loop(&teacher, &data, &opt, None, shuffle)?),
    };
    let teacher_acc = cvit::train::evaluate(&teacher, &data.val, opt.batch_size)?;

    let baseline = CViTModel::<f32>::build(&student_cfg, RngState::new(cli.seed))?;
    let base_trace = train_loop(&baseline, &data, &opt, None, shuffle)?;
    let student = CViTModel::<f32>::build(&student_cfg, RngState::new(cli.seed))?;
    let kd_trace = train_loop(&student, &data, &opt, Some(Teacher { model: &teacher, kd }), shuffle)?;
    if let Some(path) = &a.save {
        save_checkpoint(&student, path)?;
    }

    let mut rows = Rows::new(vec!["role", "model", "final_val_acc", "best_val_acc"]);
    let best = |t: &Option<TrainTrace>| t.as_ref().map_or(json!(teacher_acc), |t| json!(t.best_val_acc()));
    rows.push(vec![
        json!("teacher"),
        json!(teacher.config.name),
        json!(teacher_acc),
        best(&teacher_trace),
    ]);
    for (role, t) in [("baseline", &base_trace), ("distilled", &kd_trace)] {
        rows.push(vec![
            json!(role),
            json!(student_cfg.name),
            json!(t.final_val_acc()),
            json!(t.best_val_acc()),
        ]);
    }
    let gain = kd_trace.final_val_acc() - base_trace.final_val_acc();
    let out = match cli.format {
        Format::Json => pretty(&json!({
            "summary": rows.to_json(),
            "kd_gain": gain,
            "traces": { "teacher": teacher_trace.map(|t| t.records), "baseline": base_trace.records, "distilled": kd_trace.records },
        })),
        Format::Csv => rows.render(Format::Csv),
        Format::Table => rows.render(Format::Table) + &format!("distillation gain {gain:+.3}\n"),
    };
    Ok(out.into())
}

fn gradcheck(cli: &Cli, a: &GradcheckArgs) -> Run {
    let targets: Vec<GradcheckTarget> = if a.module == "all" {
        GradcheckTarget::ALL.to_vec()
    } else {
        vec![a.module.parse()?]
    };
    announce(cli, "gradcheck", to_value(a));
    let mut rows = Rows::new(vec![
        "module",
        "dims",
        "checked",
        "max_rel_err",
        "tolerance",
        "worst",
        "status",
    ]);
    let mut failed = false;
    for t in targets {
        let r = gradcheck_module(t, a.dims, cli.seed)?;
        let ok = r.max_rel_err <= t.tolerance();
        failed |= !ok;
        rows.push(vec![
            json!(t.name()),
            json!(a.dims),
            json!(r.checked),
            json!(format!("{:.3e}", r.max_rel_err)),
            json!(format!("{:.0e}", t.tolerance())),
            json!(r.worst),
            json!(if ok { "pass" } else { "FAIL" }),
        ]);
    }
    Ok(Outcome {
        stdout: rows.render(cli.format),
        code: if failed { EXIT_NUMERIC } else { 0 },
    })
}

fn ablate_cmd(cli: &Cli, a: &AblateArgs) -> Run {
    let mut base = resolve_model(cli, a.preset.as_deref(), "S")?;
    let grid: AblationGrid = a.grid.parse()?;
    let toy = a.train.then(|| toy_config(cli, &mut base, &a.toy));
    let opt = optim_config(&a.optim);
    let input = a.input.unwrap_or(base.image_size);
    announce(
        cli,
        "ablate",
        json!({ "base": base, "grid": grid, "input": input, "data": toy, "optim": a.train.then_some(&opt) }),
    );

    let mut results: Vec<AblationRow> = ablate(&base, &grid, input);
    if let Some(toy) = toy {
        let data = ToyDataset::<f32>::generate(toy)?;
        for (row, cfg) in results.iter_mut().zip(grid.configs(&base)) {
            if row.error.is_some() {
                continue;
            }
            let model = CViTModel::<f32>::build(&cfg, RngState::new(cli.seed))?;
            let trace = train_loop(&model, &data, &opt, None, RngState::new(cli.seed).split(1))?;
            row.val_acc = Some(trace.final_val_acc());
        }
    }
    let mut rows = Rows::new(vec![
        "chunks",
        "ratio",
        "cascade",
        "projection",
        "share",
        "params",
        "flops",
        "ffn_flops",
        "val_acc",
        "error",
    ]);
    for r in &results {
        rows.push(vec![
            json!(r.chunks),
            json!(r.ratio),
            json!(r.cascade),
            json!(r.projection),
            json!(r.share),
            json!(r.params),
            json!(r.flops),
            json!(r.ffn_flops),
            json!(r.val_acc),
            json!(r.error),
        ]);
    }
    Ok(rows.render(cli.format).into())
}

fn checkpoint_init(cli: &Cli, a: &CheckpointInitArgs) -> Run {
    let cfg = resolve_model(cli, a.preset.as_deref(), "S")?;
    announce(cli, "checkpoint init", json!({ "model": cfg, "out": a.out }));
    let model = CViTModel::<f32>::build(&cfg, RngState::new(cli.seed))?;
    save_checkpoint(&model, &a.out)?;
    Ok(format!(
        "wrote {} ({} tensors) to {}\n",
        cfg.name,
        model.parameters().len(),
        a.out.display()
    )
    .into())
}

fn checkpoint_inspect(cli: &Cli, a: &CheckpointInspectArgs) -> Run {
    announce(cli, "checkpoint inspect", to_value(a));
    let bytes = std::fs::metadata(&a.path)
        .map_err(|e| Failure::data(format!("{}: {e}", a.path.display())))?
        .len();
    let model = load_model(&a.path)?;
    let report = model.cost_report(model.config.image_size)?;
    let shared = model.sharing.as_ref().map_or(0, |s| s.pairs.len());
    let out = match cli.format {
        Format::Json => pretty(&json!({
            "path": a.path,
            "bytes": bytes,
            "config": model.config,
            "tensors": model.parameters().len(),
            "unique_params": report.unique_params(),
            "shared_pairs": shared,
        })),
        f => {
            let mut rows = Rows::new(vec!["key", "value"]);
            for (k, v) in [
                ("path", json!(a.path.display().to_string())),
                ("bytes", json!(bytes)),
                ("model", json!(model.config.name)),
                ("tensors", json!(model.parameters().len())),
                ("unique_params", json!(report.unique_params())),
                ("shared_pairs", json!(shared)),
                ("image_size", json!(model.config.image_size)),
                ("num_classes", json!(model.config.num_classes)),
            ] {
                rows.push(vec![json!(k), v]);
            }
            rows.render(f)
        }
    };
    Ok(out.into())
}
