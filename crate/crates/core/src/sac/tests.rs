use super::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn spec() -> EnvSpec {
    EnvSpec {
        state_dim: 3,
        action_dim: 2,
        action_scale: vec![1.0, 1.0],
        horizon: 10,
        state_low: vec![-2.0, 0.0, -1.0],
        state_high: vec![2.0, 4.0, 1.0],
    }
}

fn agent(seed: u64, entropy: EntropyMode) -> SacAgent {
    let cfg = SacConfig {
        hidden: vec![8, 8],
        batch_size: 4,
        entropy,
        ..SacConfig::default()
    };
    SacAgent::new(cfg, &spec(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn batch(rng: &mut ChaCha8Rng, n: usize) -> Batch {
    let items: Vec<Transition> = (0..n)
        .map(|i| Transition {
            s: vec![rng.random_range(-2.0..2.0), rng.random_range(0.0..4.0), rng.random_range(-1.0..1.0)],
            a: vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
            r: rng.random_range(-1.0..1.0),
            s_next: vec![rng.random_range(-2.0..2.0), rng.random_range(0.0..4.0), rng.random_range(-1.0..1.0)],
            done: i % 3 == 0,
        })
        .collect();
    Batch::from_transitions(&items).unwrap()
}

/// Central differences of `f` over every parameter of `net`, compared to `analytic`.
fn check_grads(net: &Mlp, analytic: &MlpGrads, f: impl Fn(&Mlp) -> f64) {
    let h = 1e-6;
    let flat = net.flat_params();
    let grads = analytic.flat();
    let mut worst: f64 = 0.0;
    for i in 0..flat.len() {
        let mut p = flat.clone();
        p[i] += h;
        let mut plus = net.clone();
        plus.set_flat_params(&p).unwrap();
        p[i] -= 2.0 * h;
        let mut minus = net.clone();
        minus.set_flat_params(&p).unwrap();
        let fd = (f(&plus) - f(&minus)) / (2.0 * h);
        let err = (fd - grads[i]).abs() / fd.abs().max(grads[i].abs()).max(1e-3);
        worst = worst.max(err);
    }
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn targets_match_per_sample_oracle() {
    let a = agent(1, EntropyMode::Fixed { alpha: 0.3 });
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let b = batch(&mut rng, 6);
    let noise = standard_normal(&mut rng, 12);
    let y = a.critic_targets(&b, &noise).unwrap();
    for i in 0..6 {
        let s2 = &b.next_states[i * 3..i * 3 + 3];
        let smp = a.head(s2).unwrap().sample(&noise[i * 2..i * 2 + 2]).unwrap();
        let mut x: Vec<f64> = s2
            .iter()
            .zip(&spec().state_low)
            .zip(&spec().state_high)
            .map(|((x, lo), hi)| 2.0 * (x - lo) / (hi - lo) - 1.0)
            .collect();
        x.extend(&smp.action);
        let q = a.q1_target.predict(&x).unwrap()[0].min(a.q2_target.predict(&x).unwrap()[0]);
        let expected = if b.dones[i] {
            b.rewards[i]
        } else {
            b.rewards[i] + 0.99 * (q - 0.3 * smp.log_prob)
        };
        assert!((y[i] - expected).abs() < 1e-12, "{} vs {}", y[i], expected);
    }
}

#[test]
fn soft_value_matches_definition() {
    let a = agent(3, EntropyMode::Fixed { alpha: 0.5 });
    let s = [0.5, 1.0, -0.2];
    let noise = [0.3, -1.1];
    let smp = a.head(&s).unwrap().sample(&noise).unwrap();
    let (q1, q2) = a.q_values(&s, &smp.action).unwrap();
    let v = a.soft_value(&s, &noise).unwrap();
    assert!((v - (q1.min(q2) - 0.5 * smp.log_prob)).abs() < 1e-12);
}

#[test]
fn critic_gradients_match_finite_differences() {
    let a = agent(4, EntropyMode::Fixed { alpha: 0.2 });
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let b = batch(&mut rng, 5);
    let noise = standard_normal(&mut rng, 10);
    let g = a.critic_grads(&b, &noise).unwrap();
    check_grads(&a.q1, &g.q1, |net| {
        let mut other = a.clone();
        other.q1 = net.clone();
        other.critic_grads(&b, &noise).unwrap().loss1
    });
    check_grads(&a.q2, &g.q2, |net| {
        let mut other = a.clone();
        other.q2 = net.clone();
        other.critic_grads(&b, &noise).unwrap().loss2
    });
}

#[test]
fn actor_gradients_match_finite_differences() {
    let a = agent(6, EntropyMode::Fixed { alpha: 0.7 });
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let b = batch(&mut rng, 5);
    let noise = standard_normal(&mut rng, 10);
    let g = a.actor_grads(&b.states, &noise).unwrap();
    check_grads(&a.policy, &g.policy, |net| {
        let mut other = a.clone();
        other.policy = net.clone();
        other.actor_grads(&b.states, &noise).unwrap().loss
    });
}

#[test]
fn alpha_gradient_matches_finite_differences() {
    let mut a = agent(8, EntropyMode::default());
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let b = batch(&mut rng, 5);
    let noise = standard_normal(&mut rng, 10);
    let g = a.actor_grads(&b.states, &noise).unwrap();
    let h = 1e-6;
    let base = a.log_alpha;
    a.log_alpha = base + h;
    let plus = a.alpha_loss(g.mean_log_prob);
    a.log_alpha = base - h;
    let minus = a.alpha_loss(g.mean_log_prob);
    assert!(((plus - minus) / (2.0 * h) - g.log_alpha).abs() < 1e-8);
}

#[test]
fn alpha_rises_when_entropy_is_below_target() {
    // A target far above any achievable entropy forces log_alpha upwards.
    let mut a = agent(
        10,
        EntropyMode::Auto {
            target_entropy: Some(100.0),
            initial_alpha: 1.0,
        },
    );
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let b = batch(&mut rng, 4);
    let noise = standard_normal(&mut rng, 8);
    a.actor_update(&b.states, &noise).unwrap();
    assert!(a.log_alpha > 0.0);

    let mut a = agent(
        10,
        EntropyMode::Auto {
            target_entropy: Some(-100.0),
            initial_alpha: 1.0,
        },
    );
    a.actor_update(&b.states, &noise).unwrap();
    assert!(a.log_alpha < 0.0);
}

#[test]
fn fixed_alpha_never_changes() {
    let mut a = agent(12, EntropyMode::Fixed { alpha: 0.1 });
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let b = batch(&mut rng, 4);
    let noise = standard_normal(&mut rng, 8);
    a.actor_update(&b.states, &noise).unwrap();
    assert_eq!(a.alpha(), 0.1);
}

#[test]
fn polyak_extremes() {
    let mut a = agent(14, EntropyMode::default());
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let b = batch(&mut rng, 4);
    let noise = standard_normal(&mut rng, 8);
    a.critic_update(&b, &noise).unwrap();
    let before = a.q1_target.clone();
    assert_ne!(before, a.q1);
    a.polyak(0.0).unwrap();
    assert_eq!(a.q1_target, before);
    a.polyak(1.0).unwrap();
    assert_eq!(a.q1_target, a.q1);
    assert_eq!(a.q2_target, a.q2);
}

#[test]
fn train_waits_for_a_full_batch() {
    let mut a = agent(16, EntropyMode::default());
    let mut buf = ReplayBuffer::new(100, 3, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let b = batch(&mut rng, 3);
    for i in 0..3 {
        buf.push(Transition {
            s: b.states[i * 3..i * 3 + 3].to_vec(),
            a: b.actions[i * 2..i * 2 + 2].to_vec(),
            r: b.rewards[i],
            s_next: b.next_states[i * 3..i * 3 + 3].to_vec(),
            done: b.dones[i],
        })
        .unwrap();
    }
    let fp = a.fingerprint();
    let mut train_rng = ChaCha8Rng::seed_from_u64(18);
    assert!(a.train(&buf, &mut train_rng, None).unwrap().is_none());
    assert_eq!(a.fingerprint(), fp);
    assert_eq!(train_rng, ChaCha8Rng::seed_from_u64(18));

    buf.push(buf.get(0).unwrap()).unwrap();
    assert!(a.train(&buf, &mut train_rng, None).unwrap().is_some());
    assert_ne!(a.fingerprint(), fp);
}

#[test]
fn relabel_replaces_rewards() {
    let mut buf = ReplayBuffer::new(10, 3, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let b = batch(&mut rng, 4);
    for i in 0..4 {
        buf.push(Transition {
            s: b.states[i * 3..i * 3 + 3].to_vec(),
            a: b.actions[i * 2..i * 2 + 2].to_vec(),
            r: 1000.0,
            s_next: b.next_states[i * 3..i * 3 + 3].to_vec(),
            done: false,
        })
        .unwrap();
    }
    let mut seen = 0;
    let mut f = |s: &[f64], _: f64, _: bool| -> Result<f64> {
        seen += 1;
        Ok(s[0])
    };
    let mut a = agent(20, EntropyMode::default());
    let stats = a
        .train(&buf, &mut ChaCha8Rng::seed_from_u64(21), Some(&mut f))
        .unwrap()
        .unwrap();
    assert_eq!(seen, 4);
    // Rewards of order 1000 would blow the critic loss far past this.
    assert!(stats.critic_loss < 100.0);
}

#[test]
fn training_is_deterministic() {
    let run = || {
        let mut a = agent(22, EntropyMode::default());
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut buf = ReplayBuffer::new(50, 3, 2).unwrap();
        let b = batch(&mut rng, 20);
        for i in 0..20 {
            buf.push(Transition {
                s: b.states[i * 3..i * 3 + 3].to_vec(),
                a: b.actions[i * 2..i * 2 + 2].to_vec(),
                r: b.rewards[i],
                s_next: b.next_states[i * 3..i * 3 + 3].to_vec(),
                done: b.dones[i],
            })
            .unwrap();
        }
        for _ in 0..10 {
            a.train(&buf, &mut rng, None).unwrap();
        }
        a
    };
    assert_eq!(run(), run());
}

#[test]
fn deterministic_action_is_squashed_mean() {
    let a = agent(24, EntropyMode::default());
    let s = [0.1, 2.0, 0.3];
    let head = a.head(&s).unwrap();
    let act = a.act(&s, true, &[]).unwrap();
    let expected: Vec<f64> = head.mean.iter().map(|m| m.tanh()).collect();
    for (x, y) in act.iter().zip(&expected) {
        assert!((x - y).abs() < 1e-15);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let untouched = rng.clone();
    a.act_rng(&s, true, &mut rng).unwrap();
    assert_eq!(rng, untouched);
}

#[test]
fn config_validation() {
    assert!(SacConfig::default().validate().is_ok());
    for bad in [
        SacConfig { gamma: 1.0, ..SacConfig::default() },
        SacConfig { tau: 0.0, ..SacConfig::default() },
        SacConfig { batch_size: 0, ..SacConfig::default() },
        SacConfig { lr: -1.0, ..SacConfig::default() },
        SacConfig { hidden: vec![0], ..SacConfig::default() },
    ] {
        assert!(bad.validate().is_err(), "{bad:?}");
    }
}
