use std::fs;
use std::path::{Path, PathBuf};

use courtplan_core::adversary::{adversarial_rollout, AdversarialConfig, DefenseKind, DefensePolicy};
use courtplan_core::diffusion::{check_compatible, make_schedule, train_diffusion, Denoiser, Trained};
use courtplan_core::evalkit::{
    check_trend, generate_synthetic, ground_truth_report, random_walk_report, run_alpha_sweep, start_states,
    write_runs_csv, write_summary_csv, write_synthetic, OffenseScript, SweepConfig,
};
use courtplan_core::ingest::{ingest_game, load_games, save_game};
use courtplan_core::planner::{plan, plan_from_container, plan_to_container, PlanConfig};
use courtplan_core::render::render_svg;
use courtplan_core::value::{train_value, ValueModel};
use courtplan_core::{denormalize, fingerprint_bytes, fingerprint_file, Container, Dataset, Space, State, TrajectoryTensor};
use courtplan_core::FEATURE_DIM;
use serde_json::{json, Value};

use crate::{Cli, CliError, Command, Models, OutArg, RunConfig, StartArgs, TrainArgs};

type Res<T> = Result<T, CliError>;

const OUT_DIR_ENV: &str = "COURTPLAN_OUT_DIR";
const ROLLOUT_KIND: &str = "rollout";

pub fn run(cli: Cli) -> Res<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Generate {
            out,
            seed,
            possessions,
            script,
        } => {
            set(&mut cfg.synthetic.seed, seed);
            set(&mut cfg.synthetic.n_possessions, possessions);
            if let Some(s) = script {
                cfg.synthetic.offense_script = s.parse::<OffenseScript>().map_err(|e| CliError::Usage(e.to_string()))?;
            }
            generate(&cfg, &out_path(&out, "synthetic")?)
        }
        Command::Ingest {
            motion,
            pbp,
            raw_dir,
            out,
        } => {
            let raw_dir = raw_dir.or(cfg.data.raw_dir.clone());
            let dir = match &out.out {
                Some(p) => p.clone(),
                None => match &cfg.data.games_dir {
                    Some(p) => p.clone(),
                    None => out_path(&out, "games")?,
                },
            };
            ingest(&cfg, motion, pbp, raw_dir, &dir)
        }
        Command::BuildDataset { games, horizon, out } => {
            set(&mut cfg.model.horizon, horizon);
            let games = games
                .or(cfg.data.games_dir.clone())
                .ok_or_else(|| CliError::Usage("--games or data.games_dir is required".into()))?;
            let dir = out.out.clone().or(cfg.data.dataset_dir.clone()).map(Ok).unwrap_or_else(|| out_path(&out, "dataset"))?;
            build_dataset(&cfg, &games, &dir)
        }
        Command::TrainDiffusion { train } => {
            let (data, path) = train_setup(&mut cfg, &train, "diffusion.ckpt")?;
            let sched = make_schedule(cfg.model.n_steps, cfg.model.schedule)?;
            let t = train_diffusion(&data, &sched, &cfg.model.arch(), &cfg.train)?;
            let c = t.model.to_container()?;
            finish_training(&cfg, c, &t, &path)
        }
        Command::TrainValue { train } => {
            let (data, path) = train_setup(&mut cfg, &train, "value.ckpt")?;
            let sched = make_schedule(cfg.model.n_steps, cfg.model.schedule)?;
            let t = train_value(&data, &sched, &cfg.model.arch(), &cfg.train)?;
            let c = t.model.to_container()?;
            finish_training(&cfg, c, &t, &path)
        }
        Command::Plan {
            models,
            start,
            alpha,
            seed,
            batch,
            out,
        } => {
            set(&mut cfg.plan.alpha, alpha);
            set(&mut cfg.plan.seed, seed);
            set(&mut cfg.plan.batch, batch);
            plan_cmd(&cfg, &models, &start, &out_path(&out, "plan.bin")?)
        }
        Command::Rollout {
            models,
            start,
            policy,
            m,
            total_len,
            alpha,
            seed,
            out,
        } => {
            if let Some(p) = policy {
                cfg.adversary.policy = p.parse::<DefenseKind>().map_err(|e| CliError::Usage(e.to_string()))?;
            }
            set(&mut cfg.adversary.m, m);
            set(&mut cfg.adversary.total_len, total_len);
            set(&mut cfg.plan.alpha, alpha);
            set(&mut cfg.plan.seed, seed);
            rollout_cmd(&cfg, &models, &start, &out_path(&out, "rollout.bin")?)
        }
        Command::Evaluate {
            models,
            data,
            alphas,
            runs,
            starts,
            seed,
            out,
        } => {
            set(&mut cfg.eval.alphas, alphas);
            set(&mut cfg.eval.n_runs, runs);
            set(&mut cfg.eval.n_starts, starts);
            set(&mut cfg.plan.seed, seed);
            let data = data
                .or(cfg.data.dataset_dir.clone())
                .ok_or_else(|| CliError::Usage("--data or data.dataset_dir is required".into()))?;
            evaluate_cmd(&cfg, &models, &data, &out_path(&out, "eval")?)
        }
        Command::Render {
            input,
            index,
            highlight,
            out,
        } => {
            if highlight.is_some() {
                cfg.render.highlight_object = highlight;
            }
            render_cmd(&cfg, &input, index, &out_path(&out, "possession.svg")?)
        }
        Command::Verify { artifact, models } => verify_cmd(&artifact, &models),
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn out_path(out: &OutArg, default_name: &str) -> Res<PathBuf> {
    if let Some(p) = &out.out {
        return Ok(p.clone());
    }
    match std::env::var_os(OUT_DIR_ENV) {
        Some(d) => Ok(PathBuf::from(d).join(default_name)),
        None => Err(CliError::Usage(format!("--out is required when {OUT_DIR_ENV} is unset"))),
    }
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Res<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::Data(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn read(path: &Path) -> Res<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn pretty(v: &Value) -> String {
    serde_json::to_string_pretty(v).expect("json serializes") + "\n"
}

fn generate(cfg: &RunConfig, dir: &Path) -> Res<()> {
    let out = generate_synthetic(&cfg.synthetic)?;
    let paths = write_synthetic(&out, dir)?;
    let mut files = serde_json::Map::new();
    for p in &paths {
        let name = p.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        files.insert(name, Value::String(fingerprint_file(p)?));
    }
    let manifest = json!({
        "config": cfg.to_json(),
        "games": out.games.len(),
        "possessions": out.sidecar.len(),
        "files": files,
    });
    write(&dir.join("generate.json"), pretty(&manifest))?;
    println!("games {} possessions {} files {}", out.games.len(), out.sidecar.len(), paths.len());
    Ok(())
}

fn ingest(cfg: &RunConfig, motion: Vec<PathBuf>, pbp: Vec<PathBuf>, raw_dir: Option<PathBuf>, out: &Path) -> Res<()> {
    let mut pairs: Vec<(PathBuf, PathBuf)> = Vec::new();
    if let Some(dir) = raw_dir {
        let mut names: Vec<String> = fs::read_dir(&dir)
            .map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().to_str().and_then(|n| n.strip_suffix(".motion.json")).map(str::to_string))
            .collect();
        names.sort();
        for n in names {
            pairs.push((dir.join(format!("{n}.motion.json")), dir.join(format!("{n}.pbp.csv"))));
        }
    }
    match pbp.len() {
        0 if !motion.is_empty() => return Err(CliError::Usage("--pbp is required with --motion".into())),
        1 => pairs.extend(motion.iter().map(|m| (m.clone(), pbp[0].clone()))),
        n if n == motion.len() => pairs.extend(motion.into_iter().zip(pbp)),
        _ if motion.is_empty() => {}
        _ => return Err(CliError::Usage("give one --pbp file, or one per --motion file".into())),
    }
    if pairs.is_empty() {
        return Err(CliError::Usage("nothing to ingest: pass --motion/--pbp or --raw-dir".into()));
    }
    let (mut n_poss, mut n_frames, mut skipped) = (0usize, 0usize, 0usize);
    let mut games = Vec::new();
    for (m, p) in &pairs {
        let mb = read(m)?;
        let pb = read(p)?;
        let (index, frames) = ingest_game(&mb, &pb)
            .map_err(|e| CliError::Data(format!("{} / {}: {e}", m.display(), p.display())))?;
        n_poss += index.possessions.len();
        n_frames += frames.len();
        skipped += index.skipped_moments;
        games.push(json!({
            "game_id": index.game_id,
            "possessions": index.possessions.len(),
            "frames": frames.len(),
            "motion": fingerprint_bytes(&mb),
            "pbp": fingerprint_bytes(&pb),
        }));
        save_game(out, &index, &frames)?;
    }
    let summary = json!({
        "config": cfg.to_json(),
        "games": pairs.len(),
        "possessions": n_poss,
        "frames": n_frames,
        "skipped_moments": skipped,
        "per_game": games,
    });
    write(&out.join("ingest.json"), pretty(&summary))?;
    println!("games {} possessions {} frames {}", pairs.len(), n_poss, n_frames);
    Ok(())
}

fn build_dataset(cfg: &RunConfig, games_dir: &Path, out: &Path) -> Res<()> {
    let games = load_games(games_dir)?;
    if games.is_empty() {
        return Err(CliError::Data(format!("{}: no ingested games", games_dir.display())));
    }
    let data = Dataset::from_games(&games, cfg.model.horizon)?;
    data.save(out, cfg.to_json())?;
    println!(
        "examples {} horizon {} stats {}",
        data.len(),
        data.horizon,
        hex16(data.stats.fingerprint())
    );
    Ok(())
}

fn hex16(v: u64) -> String {
    format!("{v:016x}")
}

fn train_setup(cfg: &mut RunConfig, t: &TrainArgs, default_name: &str) -> Res<(Dataset, PathBuf)> {
    set(&mut cfg.train.steps, t.steps);
    set(&mut cfg.train.seed, t.seed);
    set(&mut cfg.train.lr, t.lr);
    set(&mut cfg.train.batch, t.batch);
    let dir = t
        .data
        .clone()
        .or(cfg.data.dataset_dir.clone())
        .ok_or_else(|| CliError::Usage("--data or data.dataset_dir is required".into()))?;
    let data = Dataset::load(&dir)?;
    cfg.model.horizon = data.horizon;
    cfg.model.arch().validate()?;
    cfg.train.validate()?;
    Ok((data, out_path(&t.out, default_name)?))
}

fn finish_training<M>(cfg: &RunConfig, mut c: Container, t: &Trained<M>, path: &Path) -> Res<()> {
    c.header.insert("config".into(), cfg.to_json());
    if let Some(step) = t.diverged {
        c.header.insert("diverged_at".into(), json!(step));
    }
    write(path, c.to_bytes())?;
    let mut curve = String::from("step,loss\n");
    for (k, l) in t.losses.iter().enumerate() {
        curve.push_str(&format!("{k},{l}\n"));
    }
    write(&sibling(path, "losses.csv"), curve)?;
    if let Some(step) = t.diverged {
        return Err(CliError::Numeric(format!(
            "training diverged at step {step}; last finite parameters saved to {}",
            path.display()
        )));
    }
    println!(
        "steps {} final loss {} checkpoint {}",
        t.losses.len(),
        t.losses.last().copied().unwrap_or(f64::NAN),
        path.display()
    );
    Ok(())
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

struct Loaded {
    denoiser: Denoiser,
    value: ValueModel,
    fingerprints: Value,
}

fn load_models(m: &Models) -> Res<Loaded> {
    let denoiser = Denoiser::load(&m.diffusion)?;
    let value = ValueModel::load(&m.value)?;
    check_compatible(&denoiser.meta, &value.meta)?;
    Ok(Loaded {
        fingerprints: json!({
            "diffusion": fingerprint_file(&m.diffusion)?,
            "value": fingerprint_file(&m.value)?,
            "stats": denoiser.meta.stats_fingerprint(),
        }),
        denoiser,
        value,
    })
}

fn dataset_for(models: &Loaded, dir: &Path) -> Res<Dataset> {
    let data = Dataset::load(dir)?;
    let (d, m) = (hex16(data.stats.fingerprint()), models.denoiser.meta.stats_fingerprint());
    if d != m {
        return Err(CliError::Data(format!(
            "dataset normalization {d} does not match checkpoint normalization {m}"
        )));
    }
    Ok(data)
}

fn start_state(cfg: &RunConfig, models: &Loaded, s: &StartArgs) -> Res<State> {
    let dir = s
        .data
        .clone()
        .or(cfg.data.dataset_dir.clone())
        .ok_or_else(|| CliError::Usage("--data or data.dataset_dir is required for the start state".into()))?;
    let data = dataset_for(models, &dir)?;
    let ex = data.examples.get(s.example).ok_or_else(|| {
        CliError::Usage(format!("example {} out of range (dataset has {})", s.example, data.len()))
    })?;
    Ok(denormalize(&ex.tensor, &data.stats)?.state(0))
}

fn plan_cmd(cfg: &RunConfig, m: &Models, start: &StartArgs, path: &Path) -> Res<()> {
    let models = load_models(m)?;
    let s = start_state(cfg, &models, start)?;
    let pc = PlanConfig {
        alpha: cfg.plan.alpha,
        seed: cfg.plan.seed,
        batch: cfg.plan.batch,
        grad_clip: cfg.plan.grad_clip,
        x0_bound: cfg.plan.x0_bound,
        ..PlanConfig::new(&models.denoiser, s)
    };
    let p = plan(&models.denoiser, &models.value, &pc)?;
    let returns = p.returns.clone().unwrap_or_default();
    let mut config = cfg.to_json();
    config["start_example"] = json!(start.example);
    let c = plan_to_container(&p.trajectories, &returns, config, models.fingerprints)?;
    write(path, c.to_bytes())?;
    let best = returns.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = returns.iter().sum::<f64>() / returns.len().max(1) as f64;
    println!("trajectories {} mean return {mean} best return {best}", returns.len());
    Ok(())
}

fn rollout_cmd(cfg: &RunConfig, m: &Models, start: &StartArgs, path: &Path) -> Res<()> {
    let models = load_models(m)?;
    let s = start_state(cfg, &models, start)?;
    let a = &cfg.adversary;
    let mut policy = DefensePolicy::new(a.policy, cfg.synthetic.court, a.attack_side);
    policy.max_speed_ftps = a.max_speed_ftps;
    let ac = AdversarialConfig {
        segment_len: a.m,
        total_len: a.total_len,
        policy,
        alpha: cfg.plan.alpha,
        seed: cfg.plan.seed,
        plan_batch: cfg.plan.batch,
    };
    let r = adversarial_rollout(&models.denoiser, &models.value, &ac, &s)?;
    let mut config = cfg.to_json();
    config["start_example"] = json!(start.example);
    let mut c = plan_to_container(&[r.trajectory], &[r.predicted_return], config, models.fingerprints)?;
    c.kind = ROLLOUT_KIND.into();
    c.header.insert("segments".into(), json!(r.segments));
    write(path, c.to_bytes())?;
    println!(
        "policy {} m {} segments {} return {}",
        a.policy, a.m, r.segments, r.predicted_return
    );
    Ok(())
}

fn evaluate_cmd(cfg: &RunConfig, m: &Models, data_dir: &Path, dir: &Path) -> Res<()> {
    let models = load_models(m)?;
    let data = dataset_for(&models, data_dir)?;
    let court = cfg.synthetic.court;
    let starts = start_states(&data, cfg.eval.n_starts)?;
    let sweep = SweepConfig {
        alphas: cfg.eval.alphas.clone(),
        n_runs: cfg.eval.n_runs,
        seed: cfg.plan.seed,
        grad_clip: cfg.plan.grad_clip,
        x0_bound: cfg.plan.x0_bound,
        court,
    };
    let rows = run_alpha_sweep(&models.denoiser, &models.value, &starts, &sweep)?;
    let fp = sweep.fingerprint();
    let gt = ground_truth_report(&models.value, &data, &court, fp.clone())?;
    let rw = random_walk_report(
        &models.value,
        &starts,
        cfg.eval.n_runs,
        cfg.plan.seed,
        cfg.eval.random_walk_std_ft,
        &court,
        fp,
    )?;
    let reports: Vec<_> = rows.iter().map(|r| r.report.clone()).collect();
    let trend = check_trend(&reports);
    write(&dir.join("runs.csv"), write_runs_csv(&rows)?)?;
    write(&dir.join("summary.csv"), write_summary_csv(&rows)?)?;
    let mut base = String::from("baseline,avg,max,n_runs,std_error,oob_rate\n");
    for (name, r) in [("ground_truth", &gt), ("random_walk", &rw)] {
        base.push_str(&format!(
            "{name},{},{},{},{},{}\n",
            r.avg, r.max, r.n_runs, r.std_error, r.out_of_bounds_rate
        ));
    }
    write(&dir.join("baselines.csv"), base)?;
    let report = json!({
        "config": cfg.to_json(),
        "fingerprints": models.fingerprints,
        "sweep": rows,
        "ground_truth": gt,
        "random_walk": rw,
        "trend": {
            "holds": trend.holds,
            "inversions": trend.inversions,
            "inversions_within_error": trend.inversions_within_error,
        },
    });
    write(&dir.join("report.json"), pretty(&report))?;
    println!("alpha,avg,max,std_error,oob_rate");
    for r in &rows {
        println!(
            "{},{:.4},{:.4},{:.4},{:.4}",
            r.alpha, r.report.avg, r.report.max, r.report.std_error, r.report.out_of_bounds_rate
        );
    }
    println!("ground_truth {:.4} random_walk {:.4} trend {}", gt.avg, rw.avg, trend.holds);
    Ok(())
}

fn render_cmd(cfg: &RunConfig, input: &Path, index: usize, out: &Path) -> Res<()> {
    let bytes = read(input)?;
    let mut c = Container::from_bytes(&bytes)?;
    let kind = c.kind.clone();
    if kind == ROLLOUT_KIND {
        c.kind = courtplan_core::planner::PLAN_KIND.into();
    }
    let (trajs, returns) = plan_from_container(&c)?;
    let traj: &TrajectoryTensor = trajs.get(index).ok_or_else(|| {
        CliError::Usage(format!("index {index} out of range ({} trajectories)", trajs.len()))
    })?;
    debug_assert_eq!(traj.space(), Space::Raw);
    debug_assert_eq!(traj.values().ncols(), FEATURE_DIM);
    let meta = json!({
        "source": input.file_name().and_then(|n| n.to_str()),
        "source_kind": kind,
        "source_fingerprint": fingerprint_bytes(&bytes),
        "index": index,
        "return": returns.get(index),
        "config": c.header.get("config"),
        "fingerprints": c.header.get("fingerprints"),
        "render": cfg.render,
    });
    let svg = render_svg(traj, &cfg.synthetic.court, &cfg.render, Some(&meta.to_string()))?;
    write(out, svg)?;
    println!("rendered {}", out.display());
    Ok(())
}

/// Provenance recorded in a plan/rollout container, a JSON report or an SVG.
fn provenance(path: &Path) -> Res<Value> {
    let bytes = read(path)?;
    if let Ok(c) = Container::from_bytes(&bytes) {
        return c
            .header
            .get("fingerprints")
            .cloned()
            .ok_or_else(|| CliError::Data(format!("{}: no fingerprints recorded", path.display())));
    }
    let text = String::from_utf8_lossy(&bytes);
    let json_text = match (text.find("<metadata>"), text.find("</metadata>")) {
        (Some(a), Some(b)) if a < b => text[a + "<metadata>".len()..b]
            .replace("&lt;", "<")
            .replace("&gt;", ">")
            .replace("&amp;", "&"),
        _ => text.into_owned(),
    };
    let v: Value = serde_json::from_str(&json_text)
        .map_err(|e| CliError::Data(format!("{}: unrecognized artifact ({e})", path.display())))?;
    v.get("fingerprints")
        .filter(|f| !f.is_null())
        .cloned()
        .ok_or_else(|| CliError::Data(format!("{}: no fingerprints recorded", path.display())))
}

fn verify_cmd(artifact: &Path, m: &Models) -> Res<()> {
    let recorded = provenance(artifact)?;
    let mut mismatches = Vec::new();
    for (key, path) in [("diffusion", &m.diffusion), ("value", &m.value)] {
        let actual = fingerprint_file(path)?;
        let want = recorded.get(key).and_then(Value::as_str).unwrap_or("<missing>");
        if want != actual {
            mismatches.push(format!("{key}: artifact records {want}, {} has {actual}", path.display()));
        }
    }
    if mismatches.is_empty() {
        println!("verified {}", artifact.display());
        Ok(())
    } else {
        Err(CliError::Data(format!("provenance mismatch: {}", mismatches.join("; "))))
    }
}
