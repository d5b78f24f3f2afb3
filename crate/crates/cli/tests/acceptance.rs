//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria 1–4, 8 and 9 are computed here and must pass. Criteria 5–7 are
//! long training experiments; they are read from the per-run summaries under
//! `results/` (produced by the sweeps described in the README), or re-run
//! from scratch into a temporary directory when `ARL_ACCEPTANCE_RUN=1`.
//! Their outcome is reported but only fails the suite when
//! `ARL_ACCEPTANCE_STRICT=1`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use arl_cli::commands::{self, load_summary, RunSummary, FINAL_CHECKPOINT, METRICS_FILE};
use arl_cli::config::RunConfig;
use arl_core::arl::{
    adversary_reward, train_plain_sac, AdversaryKind, ArlConfig, Termination, Trainer,
};
use arl_core::disentangle::collision_penalty;
use arl_core::env::{EnvSpec, Environment, ResetMode, StepResult};
use arl_core::maze::{MazeConfig, MazeEnv, MazeGrid};
use arl_core::nn::Mlp;
use arl_core::sac::{standard_normal, Batch, SacAgent, SacConfig, Transition};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

type Outcome = Result<String, String>;

fn check(cond: bool, ok: String, fail: String) -> Outcome {
    if cond {
        Ok(ok)
    } else {
        Err(fail)
    }
}

// ---------------------------------------------------------------- criterion 1

/// Largest relative error between analytic and central-difference gradients.
fn fd_error(analytic: &[f64], params: &[f64], mut loss: impl FnMut(&[f64]) -> f64) -> f64 {
    let eps = 1e-6;
    let mut p = params.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + eps;
        let up = loss(&p);
        p[i] = orig - eps;
        let down = loss(&p);
        p[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let rel = (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    worst
}

/// Fully random parameters, biases included, so no ReLU sits exactly on its kink.
fn randomize(net: &mut Mlp, rng: &mut ChaCha8Rng) {
    let p: Vec<f64> = (0..net.num_params()).map(|_| rng.random_range(-0.8..0.8)).collect();
    net.set_flat_params(&p).unwrap();
}

fn tiny_spec(state_dim: usize, action_dim: usize) -> EnvSpec {
    EnvSpec {
        state_dim,
        action_dim,
        action_scale: vec![1.0; action_dim],
        horizon: 10,
        state_low: vec![-2.0; state_dim],
        state_high: vec![2.0; state_dim],
    }
}

fn random_batch(rng: &mut ChaCha8Rng, n: usize, sd: usize, ad: usize) -> Batch {
    let items: Vec<Transition> = (0..n)
        .map(|i| Transition {
            s: (0..sd).map(|_| rng.random_range(-2.0..2.0)).collect(),
            a: (0..ad).map(|_| rng.random_range(-0.95..0.95)).collect(),
            r: rng.random_range(-1.0..1.0),
            s_next: (0..sd).map(|_| rng.random_range(-2.0..2.0)).collect(),
            done: i % 3 == 0,
        })
        .collect();
    Batch::from_transitions(&items).unwrap()
}

fn gradient_exactness() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..3u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        let sizes = [3, 5, 4, 2];
        let mut mlp = Mlp::new(&sizes, &mut rng).unwrap();
        randomize(&mut mlp, &mut rng);
        let batch = 4;
        let x: Vec<f64> = (0..batch * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..batch * 2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let weighted = |m: &Mlp, x: &[f64]| -> f64 {
            let c = m.forward_batch(x, batch).unwrap();
            c.output().iter().zip(&w).map(|(o, w)| o * w).sum()
        };
        let cache = mlp.forward_batch(&x, batch).unwrap();
        let (g, dx) = mlp.backprop(&cache, &w).unwrap();
        worst = worst.max(fd_error(&g.flat(), &mlp.flat_params(), |p| {
            let mut m = mlp.clone();
            m.set_flat_params(p).unwrap();
            weighted(&m, &x)
        }));
        worst = worst.max(fd_error(&dx, &x, |xp| weighted(&mlp, xp)));

        let (sd, ad) = (3, 2);
        let cfg = SacConfig {
            hidden: vec![6, 5],
            batch_size: 5,
            ..SacConfig::default()
        };
        let mut agent = SacAgent::new(cfg, &tiny_spec(sd, ad), &mut rng).unwrap();
        for net in [&mut agent.policy, &mut agent.q1, &mut agent.q2, &mut agent.q1_target, &mut agent.q2_target] {
            randomize(net, &mut rng);
        }
        agent.log_alpha = rng.random_range(-1.0..0.5);
        let b = random_batch(&mut rng, 5, sd, ad);
        let next_noise = standard_normal(&mut rng, 5 * ad);
        let cg = agent.critic_grads(&b, &next_noise).unwrap();
        for (which, grads) in [(1, &cg.q1), (2, &cg.q2)] {
            let params = if which == 1 { agent.q1.flat_params() } else { agent.q2.flat_params() };
            worst = worst.max(fd_error(&grads.flat(), &params, |p| {
                let mut a = agent.clone();
                let g = if which == 1 {
                    a.q1.set_flat_params(p).unwrap();
                    a.critic_grads(&b, &next_noise).unwrap()
                } else {
                    a.q2.set_flat_params(p).unwrap();
                    a.critic_grads(&b, &next_noise).unwrap()
                };
                if which == 1 {
                    g.loss1
                } else {
                    g.loss2
                }
            }));
        }

        // Keep the two critics apart so the min in the actor loss never switches
        // branch inside a finite-difference step.
        let last = agent.q2.num_layers() - 1;
        agent.q2.biases_mut(last)[0] += 50.0;
        let noise = standard_normal(&mut rng, 5 * ad);
        let ag = agent.actor_grads(&b.states, &noise).unwrap();
        worst = worst.max(fd_error(&ag.policy.flat(), &agent.policy.flat_params(), |p| {
            let mut a = agent.clone();
            a.policy.set_flat_params(p).unwrap();
            a.actor_grads(&b.states, &noise).unwrap().loss
        }));
        worst = worst.max(fd_error(&[ag.log_alpha], &[agent.log_alpha], |p| {
            let mut a = agent.clone();
            a.log_alpha = p[0];
            a.alpha_loss(ag.mean_log_prob)
        }));
    }
    check(
        worst <= 1e-4,
        format!("max relative error {worst:.2e} <= 1e-4"),
        format!("max relative error {worst:.2e} > 1e-4"),
    )
}

// ---------------------------------------------------------------- criterion 2

fn collision_penalty_oracle() -> Outcome {
    let mut worst: f64 = 0.0;
    for gamma in [0.9f64, 0.99] {
        for horizon in [1usize, 7, 50] {
            let mut prev = f64::INFINITY;
            for t in 0..=horizon {
                let brute: f64 = -(0..horizon - t + 1).map(|k| gamma.powi(k as i32)).sum::<f64>();
                let got = collision_penalty(gamma, horizon, t);
                worst = worst.max((got - brute).abs());
                if got.abs() >= prev {
                    return Err(format!("magnitude not decreasing at gamma {gamma}, H {horizon}, t {t}"));
                }
                prev = got.abs();
            }
        }
    }
    check(
        worst <= 1e-9,
        format!("max deviation from brute-force sum {worst:.1e}; magnitudes strictly decreasing"),
        format!("max deviation {worst:.1e} > 1e-9"),
    )
}

// ---------------------------------------------------------------- criterion 3

fn adversary_reward_wiring() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let spec = tiny_spec(3, 3);
    let agent = SacAgent::new(SacConfig::default(), &spec, &mut rng).unwrap();
    for i in 0..1000 {
        let s: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
        let noise = standard_normal(&mut rng, 3);
        let r = adversary_reward(&agent, &s, &noise).unwrap();
        let v = agent.soft_value(&s, &noise).unwrap();
        if r.to_bits() != (-v).to_bits() {
            return Err(format!("pair {i}: reward {r} != -{v}"));
        }
    }
    Ok("1000 random (state, noise) pairs bit-exact".into())
}

// ---------------------------------------------------------------- criterion 4

/// Maze whose goal never ends an episode.
struct NoEarlyEnd(MazeEnv);

impl Environment for NoEarlyEnd {
    fn spec(&self) -> &EnvSpec {
        self.0.spec()
    }
    fn reset(&mut self, mode: &ResetMode, rng: &mut dyn RngCore) -> arl_core::Result<Vec<f64>> {
        self.0.reset(mode, rng)
    }
    fn step(&mut self, action: &[f64]) -> arl_core::Result<StepResult> {
        self.0.step(action)
    }
    fn state(&self) -> Option<Vec<f64>> {
        self.0.state()
    }
    fn check_state(&self, s: &[f64]) -> arl_core::Result<()> {
        self.0.check_state(s)
    }
    fn set_success_detection(&mut self, _: bool) {
        self.0.set_success_detection(false)
    }
    fn clock(&self) -> usize {
        self.0.clock()
    }
    fn restart_clock(&mut self) {
        self.0.restart_clock()
    }
}

fn small_sac() -> SacConfig {
    SacConfig {
        hidden: vec![8],
        batch_size: 8,
        buffer_capacity: 5000,
        ..SacConfig::default()
    }
}

fn maze_env() -> MazeEnv {
    MazeEnv::new(Arc::new(MazeGrid::bundled()), MazeConfig::default()).unwrap()
}

fn schedule_counts() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut seen = Vec::new();
    for trial in 0..3 {
        let cfg = ArlConfig {
            iterations: rng.random_range(1..=3),
            k_a: rng.random_range(1..=4),
            k_p: rng.random_range(1..=4),
            h_a: rng.random_range(1..=6),
            h_p: rng.random_range(1..=8),
            adversary_kind: AdversaryKind::Learned,
            relabel_adversary_rewards: false,
        };
        let mut t = Trainer::new(NoEarlyEnd(maze_env()), cfg.clone(), small_sac(), small_sac(), trial).unwrap();
        t.run(&mut |r| {
            assert_eq!(r.termination, Termination::Timeout);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
        let (n, ka, kp, ha, hp) = (cfg.iterations as u64, cfg.k_a as u64, cfg.k_p as u64, cfg.h_a as u64, cfg.h_p as u64);
        let log = t.log();
        let expected = [n * ka * ha, n * kp * hp, n * (ka + kp) * ha, n * (ka + kp) * hp];
        let got = [
            log.adversary_train_calls,
            log.protagonist_train_calls,
            log.adversary_insertions,
            log.protagonist_insertions,
        ];
        if got != expected {
            return Err(format!("config {cfg:?}: counters {got:?}, expected {expected:?}"));
        }
        seen.push(format!("N={n} K_A={ka} K_P={kp} H_A={ha} H_P={hp} -> {got:?}"));
    }
    Ok(seen.join("; "))
}

// ---------------------------------------------------------------- criterion 8

fn tiny_run_config() -> RunConfig {
    let mut cfg = RunConfig {
        seed: 17,
        protagonist: small_sac(),
        adversary: small_sac(),
        episodes: Some(24),
        checkpoint_every: 1,
        ..RunConfig::default()
    };
    cfg.arl.k_a = 3;
    cfg.arl.k_p = 3;
    cfg.arl.h_a = 10;
    cfg.arl.h_p = 30;
    cfg.eval.n_per_cell = 1;
    cfg.resolve().unwrap();
    cfg
}

fn determinism_and_resume() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = tiny_run_config();
    let run = |root: &Path| commands::train(&cfg, root, None).map_err(|e| format!("{e:#}"));
    let a = run(&tmp.path().join("a"))?.dir;
    let b = run(&tmp.path().join("b"))?.dir;
    let read = |p: PathBuf| fs::read(&p).map_err(|e| format!("{}: {e}", p.display()));
    if read(a.join(METRICS_FILE))? != read(b.join(METRICS_FILE))? {
        return Err("repeated runs wrote different metrics".into());
    }
    if read(a.join(FINAL_CHECKPOINT))? != read(b.join(FINAL_CHECKPOINT))? {
        return Err("repeated runs wrote different checkpoints".into());
    }

    let resumed_root = tmp.path().join("r");
    let dir = resumed_root.join(cfg.run_dir_name());
    fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    fs::copy(a.join(METRICS_FILE), dir.join(METRICS_FILE)).map_err(|e| e.to_string())?;
    let ck = a.join("checkpoints").join("iter_000002.ckpt");
    commands::train(&cfg, &resumed_root, Some(&ck)).map_err(|e| format!("{e:#}"))?;
    if read(dir.join(METRICS_FILE))? != read(a.join(METRICS_FILE))? {
        return Err("resumed run wrote different metrics".into());
    }
    if read(dir.join(FINAL_CHECKPOINT))? != read(a.join(FINAL_CHECKPOINT))? {
        return Err("resumed run reached a different final checkpoint".into());
    }
    let rows = fs::read_to_string(a.join(METRICS_FILE)).unwrap().lines().count() - 1;
    Ok(format!(
        "two runs byte-identical ({rows} metric rows); resume from iteration 2 of {} matches bit-exactly",
        cfg.arl.iterations
    ))
}

// ---------------------------------------------------------------- criterion 9

fn degenerate_schedule() -> Outcome {
    let cfg = ArlConfig {
        iterations: 6,
        k_a: 1,
        k_p: 4,
        h_a: 0,
        h_p: 40,
        adversary_kind: AdversaryKind::None,
        relabel_adversary_rewards: false,
    };
    let mut t = Trainer::new(maze_env(), cfg.clone(), small_sac(), small_sac(), 23).unwrap();
    let mut arl_rows = Vec::new();
    t.run(&mut |r| {
        arl_rows.push(r.csv_row());
        Ok(())
    })
    .map_err(|e| e.to_string())?;
    let mut plain_rows = Vec::new();
    let agent = train_plain_sac(&mut maze_env(), small_sac(), 6, 4, 40, 23, &mut |r| {
        plain_rows.push(r.csv_row());
        Ok(())
    })
    .map_err(|e| e.to_string())?;
    if arl_rows != plain_rows {
        return Err("metrics streams differ".into());
    }
    if &agent != t.protagonist() {
        return Err("final agents differ".into());
    }
    Ok(format!("{} identical metric rows and identical final agents", arl_rows.len()))
}

// ---------------------------------------------------------------- criteria 5–7

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn load_group(dir: &Path) -> Result<BTreeMap<String, Vec<RunSummary>>, String> {
    let mut out: BTreeMap<String, Vec<RunSummary>> = BTreeMap::new();
    let entries = fs::read_dir(dir).map_err(|e| format!("no results in {}: {e}", dir.display()))?;
    for e in entries.flatten() {
        if e.path().join(commands::SUMMARY_FILE).exists() {
            let s = load_summary(&e.path()).map_err(|e| format!("{e:#}"))?;
            out.entry(s.method.clone()).or_default().push(s);
        }
    }
    Ok(out)
}

fn run_experiments(config: &str, out: &Path) -> Result<(), String> {
    let path = repo_root().join("configs").join(config);
    let cfg = RunConfig::load(Some(&path), &[], None).map_err(|e| format!("{e:#}"))?;
    let axes = vec!["seed=1,2,3".parse().map_err(|e| format!("{e}"))?];
    commands::sweep(&cfg, &axes, out).map_err(|e| format!("{e:#}"))?;
    Ok(())
}

/// Results for one environment: recorded ones, or fresh runs of the bundled configs.
fn experiment_results(env: &str, configs: &[&str], scratch: &Path) -> Result<BTreeMap<String, Vec<RunSummary>>, String> {
    if std::env::var("ARL_ACCEPTANCE_RUN").is_ok_and(|v| v == "1") {
        let out = scratch.join(env);
        for c in configs {
            run_experiments(c, &out)?;
        }
        load_group(&out)
    } else {
        load_group(&repo_root().join("results").join(env))
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn metric(
    groups: &BTreeMap<String, Vec<RunSummary>>,
    method: &str,
    f: impl Fn(&RunSummary) -> Option<f64>,
) -> Result<f64, String> {
    let runs = groups.get(method).ok_or_else(|| format!("no runs for method {method}"))?;
    let values: Vec<f64> = runs.iter().filter_map(&f).collect();
    if values.len() < 3 {
        return Err(format!("method {method} has {} runs with the metric, need 3", values.len()));
    }
    Ok(mean(&values))
}

fn eval_success(name: &'static str) -> impl Fn(&RunSummary) -> Option<f64> {
    move |s| s.evaluations.get(name).map(|e| e.success_rate)
}

fn maze_performance(groups: &BTreeMap<String, Vec<RunSummary>>) -> Outcome {
    let asac = metric(groups, "asac10", eval_success("uniform"))?;
    let sac = metric(groups, "sac", eval_success("uniform"))?;
    let ra = metric(groups, "ra10", eval_success("uniform"))?;
    let msg = format!(
        "uniform-start success ASAC {:.1}%, SAC {:.1}%, RA {:.1}% (need ASAC >= SAC + 15, |RA - SAC| <= 10, RA < ASAC)",
        100.0 * asac,
        100.0 * sac,
        100.0 * ra
    );
    check(asac >= sac + 0.15 && (ra - sac).abs() <= 0.10 && ra < asac, msg.clone(), msg)
}

fn maze_footprint(groups: &BTreeMap<String, Vec<RunSummary>>) -> Outcome {
    let asac = metric(groups, "asac10", |s| s.footprint)?;
    let sac = metric(groups, "sac", |s| s.footprint)?;
    let msg = format!("visited-cell fraction ASAC {asac:.3}, SAC {sac:.3} (need ASAC >= 2 x SAC)");
    check(asac >= 2.0 * sac, msg.clone(), msg)
}

fn disentangle_performance(groups: &BTreeMap<String, Vec<RunSummary>>) -> Outcome {
    let asac_test = metric(groups, "asac10", eval_success("test"))?;
    let sac_test = metric(groups, "sac", eval_success("test"))?;
    let asac_train = metric(groups, "asac10", eval_success("train"))?;
    let sac_train = metric(groups, "sac", eval_success("train"))?;
    let msg = format!(
        "test success ASAC {:.1}%, SAC {:.1}%; training-set success ASAC {:.1}%, SAC {:.1}% (need test gap >= 10, both train >= 70)",
        100.0 * asac_test,
        100.0 * sac_test,
        100.0 * asac_train,
        100.0 * sac_train
    );
    check(
        asac_test >= sac_test + 0.10 && asac_train >= 0.70 && sac_train >= 0.70,
        msg.clone(),
        msg,
    )
}

// ---------------------------------------------------------------- driver

fn main() -> ExitCode {
    // Ignore harness flags such as --nocapture or a name filter.
    let strict = std::env::var("ARL_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let scratch = tempfile::tempdir().expect("temporary directory");
    let maze = experiment_results("maze", &["maze_asac10.json", "maze_sac.json", "maze_ra10.json"], scratch.path());
    let dis = experiment_results("disentangle", &["disentangle_asac10.json", "disentangle_sac.json"], scratch.path());

    type Criterion<'a> = (usize, &'static str, bool, Box<dyn FnOnce() -> Outcome + 'a>);
    let criteria: Vec<Criterion> = vec![
        (1, "gradient exactness", true, Box::new(gradient_exactness)),
        (2, "collision penalty oracle", true, Box::new(collision_penalty_oracle)),
        (3, "adversary reward wiring", true, Box::new(adversary_reward_wiring)),
        (4, "schedule counts", true, Box::new(schedule_counts)),
        (5, "maze relative performance", false, Box::new(|| maze_performance(maze.as_ref()?))),
        (6, "maze exploration footprint", false, Box::new(|| maze_footprint(maze.as_ref()?))),
        (7, "disentangle relative performance", false, Box::new(|| disentangle_performance(dis.as_ref()?))),
        (8, "determinism and resume", true, Box::new(determinism_and_resume)),
        (9, "degenerate schedule equivalence", true, Box::new(degenerate_schedule)),
    ];

    let mut failed_required = false;
    for (n, name, required, f) in criteria {
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("criterion {n} [{tag}] {name}: {detail} ({secs:.1}s)");
        if outcome.is_err() && (required || strict) {
            failed_required = true;
        }
    }
    if failed_required {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
