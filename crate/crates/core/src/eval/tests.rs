use std::sync::Arc;

use super::*;
use crate::disentangle::{DisentangleConfig, DisentangleEnv, ScenarioSet, ScenarioTag};
use crate::env::EnvSpec;
use crate::maze::{maze_step, MazeConfig};
use crate::sac::SacConfig;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn maze_env() -> MazeEnv {
    MazeEnv::new(Arc::new(MazeGrid::bundled()), MazeConfig::default()).unwrap()
}

/// Heads for the centre of the neighbouring cell one step closer to the goal.
fn bfs_policy(grid: &MazeGrid) -> impl Fn(&[f64]) -> Vec<f64> + '_ {
    let (gc, gr) = grid.cells_of(Cell::Goal)[0];
    let dist = grid.distances_from(gc, gr);
    move |s: &[f64]| {
        let (c, r) = grid.cell_index(s[0], s[1]).unwrap();
        let here = dist[r * grid.width() + c].unwrap();
        let mut target = (c, r);
        for (dc, dr) in [(1i64, 0i64), (-1, 0), (0, 1), (0, -1)] {
            let (nc, nr) = ((c as i64 + dc) as usize, (r as i64 + dr) as usize);
            if let Some(d) = dist[nr * grid.width() + nc] {
                if d < here {
                    target = (nc, nr);
                }
            }
        }
        let t = [target.0 as f64 + 0.5, target.1 as f64 + 0.5];
        vec![(t[0] - s[0]).clamp(-0.99, 0.99), (t[1] - s[1]).clamp(-0.99, 0.99)]
    }
}

#[test]
fn goal_seeking_policy_succeeds_everywhere() {
    let mut env = maze_env();
    let grid = env.shared_grid();
    let policy = bfs_policy(&grid);
    let g = evaluate_uniform(&mut env, &policy, 5, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_eq!(g.success_rate(), 1.0);
    for (c, r) in grid.open_cells() {
        assert_eq!(g.get(c, r).unwrap().success_rate, 1.0);
        assert_eq!(g.get(c, r).unwrap().episodes, 5);
    }
}

#[test]
fn immobile_policy_succeeds_only_in_goal_cells() {
    let mut env = maze_env();
    let grid = env.shared_grid();
    let still = |_: &[f64]| vec![0.0, 0.0];
    let g = evaluate_uniform(&mut env, &still, 3, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    for row in 0..grid.height() {
        for col in 0..grid.width() {
            match grid.cell(col, row) {
                Cell::Wall => assert!(g.get(col, row).is_none()),
                Cell::Goal => assert_eq!(g.get(col, row).unwrap().success_rate, 1.0),
                _ => assert_eq!(g.get(col, row).unwrap().success_rate, 0.0),
            }
        }
    }
}

#[test]
fn grid_matches_scripted_resimulation() {
    let mut env = maze_env();
    let spec = env.spec().clone();
    let agent = SacAgent::new(SacConfig::default(), &spec, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let fp = agent.fingerprint();
    let g = evaluate_uniform(&mut env, &agent, 2, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    assert_eq!(agent.fingerprint(), fp);

    let grid = MazeGrid::bundled();
    let cfg = MazeConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for (col, row) in grid.open_cells() {
        let mut total = 0.0;
        for _ in 0..2 {
            let mut s = [col as f64 + rng.random::<f64>(), row as f64 + rng.random::<f64>()];
            for _ in 0..cfg.horizon {
                let a = agent.act(&s, true, &[]).unwrap();
                let t = maze_step(&grid, &cfg, s, [a[0] * cfg.max_speed, a[1] * cfg.max_speed], true);
                total += t.reward;
                s = t.s_next;
                if t.terminal.is_terminal() {
                    break;
                }
            }
        }
        let got = g.get(col, row).unwrap().mean_return;
        assert!((got - total / 2.0).abs() <= 1e-12, "cell ({col},{row})");
    }
}

#[test]
fn zero_cells_rejected() {
    let mut env = maze_env();
    let still = |_: &[f64]| vec![0.0, 0.0];
    assert!(evaluate_uniform(&mut env, &still, 0, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
}

#[test]
fn scenario_success_is_counted() {
    let cfg = DisentangleConfig::default();
    let set = ScenarioSet::bundled();
    let mut env = DisentangleEnv::with_training_set(cfg, &set).unwrap();
    let free = crate::disentangle::Scenario {
        name: "free".into(),
        tag: ScenarioTag::Test,
        q: vec![std::f64::consts::FRAC_PI_2, 0.0, 0.0],
    };
    let train = set.with_tag(ScenarioTag::Train);
    let scenarios = vec![&free, train[0], train[1], train[2]];
    let still = |_: &[f64]| vec![0.0, 0.0, 0.0];
    let e = evaluate_scenarios(&mut env, &still, &scenarios, 25, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(e.episodes, 100);
    assert_eq!(100.0 * e.success_rate, 25.0);
    assert_eq!(e.scenarios[0].success_rate, 1.0);
    assert!(evaluate_scenarios(&mut env, &still, &[], 1, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
}

#[test]
fn stderr_over_runs() {
    let s = MethodSummary::from_runs("x", &[1.0, 2.0, 3.0], &[0.1, 0.2, 0.3]).unwrap();
    assert_eq!(s.mean_return.mean, 2.0);
    assert!((s.mean_return.stderr - 1.0 / 3f64.sqrt()).abs() < 1e-12);
    assert!((s.success.mean - 20.0).abs() < 1e-12);
    assert!(!s.single_run);

    let one = MethodSummary::from_runs("y", &[4.0], &[0.5]).unwrap();
    assert_eq!(one.mean_return.stderr, 0.0);
    assert!(one.single_run);
    assert!(MethodSummary::from_runs("z", &[], &[]).is_err());
}

proptest! {
    #[test]
    fn stderr_matches_direct_formula(values in prop::collection::vec(-100.0f64..100.0, 2..20)) {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        let direct = (ss / (n - 1.0)).sqrt() / n.sqrt();
        let e = Estimate::of(&values).unwrap();
        prop_assert!((e.stderr - direct).abs() <= 1e-9 * (1.0 + direct));
    }

    #[test]
    fn heatmap_is_monotone(means in prop::collection::vec(-50.0f64..50.0, 2..12)) {
        let grid = EvalGrid {
            width: means.len(),
            height: 1,
            cells: means.iter().map(|&m| Some(CellStats { episodes: 1, mean_return: m, success_rate: 0.0 })).collect(),
        };
        let pixels: Vec<u32> = grid.to_pgm().lines().nth(3).unwrap()
            .split(' ').map(|p| p.parse().unwrap()).collect();
        for i in 0..means.len() {
            for j in 0..means.len() {
                if means[i] > means[j] {
                    prop_assert!(pixels[i] >= pixels[j]);
                }
            }
        }
    }
}

fn strip(width: usize, means: &[Option<f64>]) -> EvalGrid {
    EvalGrid {
        width,
        height: means.len() / width,
        cells: means
            .iter()
            .map(|m| {
                m.map(|m| CellStats {
                    episodes: 5,
                    mean_return: m,
                    success_rate: 0.4,
                })
            })
            .collect(),
    }
}

#[test]
fn heatmap_endpoints_and_degenerate_range() {
    let g = strip(3, &[Some(-1.0), None, Some(1.0)]);
    assert_eq!(g.to_pgm(), "P2\n3 1\n255\n0 0 255\n");
    let g = strip(2, &[Some(0.7), Some(0.7), None, Some(0.7)]);
    assert_eq!(g.to_pgm(), "P2\n2 2\n255\n255 255\n0 255\n");
}

#[test]
fn grid_csv_round_trip() {
    let mut env = maze_env();
    let spec: EnvSpec = env.spec().clone();
    let agent = SacAgent::new(SacConfig::default(), &spec, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let g = evaluate_uniform(&mut env, &agent, 1, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
    assert_eq!(EvalGrid::from_csv(&g.to_csv()).unwrap(), g);
    assert!(EvalGrid::from_csv("col,row,kind,episodes,mean_return,success_rate\n0,0,free,1,x,0\n").is_err());
}

#[test]
fn footprint_of_immobile_agent_is_reset_cells() {
    let grid = MazeGrid::bundled();
    let mut f = Footprint::new(&grid);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..100 {
        let cells = grid.cells_of(Cell::Reset);
        let cell = cells[rng.random_range(0..cells.len())];
        f.visit(&MazeEnv::point_in_cell(&mut rng, cell));
    }
    let expected = grid.cells_of(Cell::Reset).len() as f64 / grid.open_cells().len() as f64;
    assert_eq!(f.fraction(), expected);

    for (c, r) in grid.open_cells() {
        f.visit(&[c as f64 + 0.5, r as f64 + 0.5]);
    }
    assert_eq!(f.fraction(), 1.0);
}

#[test]
fn footprint_matches_brute_force_scan() {
    let grid = MazeGrid::bundled();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let log: Vec<[f64; 2]> = (0..40)
        .map(|_| [rng.random_range(0.0..10.0), rng.random_range(0.0..10.0)])
        .filter(|s| grid.is_open(s[0], s[1]))
        .collect();
    let mut f = Footprint::new(&grid);
    for s in &log {
        f.visit(s);
    }
    let open = grid.open_cells();
    let hit = open
        .iter()
        .filter(|&&(c, r)| log.iter().any(|s| s[0].floor() as usize == c && s[1].floor() as usize == r))
        .count();
    assert_eq!(f.fraction(), hit as f64 / open.len() as f64);
}
