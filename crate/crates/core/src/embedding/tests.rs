use std::sync::Arc;

use super::*;
use crate::dynkin::{perfect_hedge, solve_game, Mode};
use crate::lattice::{BarrierSpec, UpperBarrier};

fn model() -> MarketModel {
    MarketModel::new(100.0, 0.03, 0.1, 0.25, 1.0)
}

fn within(sample: (f64, f64), target: f64, sigmas: f64) -> bool {
    (sample.0 - target).abs() <= sigmas * sample.1
}

#[test]
fn rejects_coarse_grids() {
    let cfg = SimConfig { dt_divisor: 1.0, ..Default::default() };
    assert!(Simulator::new(&model(), 10, &cfg).is_err());
    let sim = Simulator::new(&model(), 10, &SimConfig::default()).unwrap();
    assert!(sim.clone().with_dt(0.1).is_err());
    assert!(sim.with_dt(0.01).is_ok());
    assert!(Simulator::new(&model(), 10, &SimConfig { paths: 0, ..Default::default() }).is_err());
}

#[test]
fn streams_are_reproducible_and_independent_of_order() {
    let sim = Simulator::new(&model(), 20, &SimConfig { seed: 9, ..Default::default() }).unwrap();
    let limit = ExitLimit { exits: 20, until: 1.0 };
    let (a, ra, _) = sim.simulate(5, limit);
    let _ = sim.simulate(4, limit);
    let (b, rb, _) = sim.simulate(5, limit);
    assert_eq!((a, ra.clone()), (b, rb));
    let (c, rc, _) = sim.simulate(6, limit);
    assert_ne!(ra.theta, rc.theta);
    assert_eq!(c.stream, 6);
}

#[test]
fn record_invariants() {
    let sim = Simulator::new(&model(), 30, &SimConfig::default()).unwrap();
    let h = sim.sp.h;
    for i in 0..50 {
        let (path, rec, _) = sim.simulate(i, ExitLimit { exits: 30, until: f64::INFINITY });
        assert_eq!(rec.exits(), 30);
        assert!(rec.theta.windows(2).all(|w| w[1] > w[0]));
        // at each detection the path sits within one grid move of the snapped level
        let mut level = 0.0;
        for (k, &s) in rec.signs.iter().enumerate() {
            level += f64::from(s) * h;
            let at = path.values[(rec.theta[k + 1] / path.dt).ceil() as usize];
            assert!((at - level).abs() < 0.5 * h, "{at} vs {level}");
        }
    }
}

#[test]
fn increment_variance_matches_dt() {
    let sim = Simulator::new(&model(), 10, &SimConfig::default()).unwrap();
    let (path, _, _) = sim.simulate(0, ExitLimit { exits: usize::MAX, until: 1.0 });
    let m = sim.measure.drift(&sim.model);
    let incs: Vec<f64> = path.values.windows(2).map(|w| w[1] - w[0] - m * path.dt).collect();
    let var = incs.iter().map(|x| x * x).sum::<f64>() / incs.len() as f64;
    // 4000 increments: the sample variance has relative s.e. sqrt(2/4000)
    assert!((var / path.dt - 1.0).abs() < 4.0 * (2.0 / incs.len() as f64).sqrt());
}

#[test]
fn driftless_exit_statistics() {
    let kappa: f64 = 0.25;
    let m = MarketModel::new(100.0, 0.0, kappa * kappa / 2.0, kappa, 1.0);
    let stats = exit_statistics(&m, 50, &SimConfig { paths: 20_000, seed: 3, ..Default::default() }).unwrap();
    assert!((stats.up_probability - 0.5).abs() < 1e-12);
    assert!(within(stats.up_frequency, 0.5, 3.0), "{stats:?}");
    assert!(within(stats.theta1_mean, 1.0 / 50.0, 3.0), "{stats:?}");
}

#[test]
fn drifted_exit_statistics() {
    for measure in [Measure::Objective, Measure::Martingale] {
        let cfg = SimConfig { paths: 20_000, seed: 11, measure, ..Default::default() };
        let stats = exit_statistics(&model(), 40, &cfg).unwrap();
        assert!(within(stats.up_frequency, stats.up_probability, 3.0), "{stats:?}");
        assert!(within(stats.theta1_mean, stats.theta1_expected, 3.0), "{stats:?}");
        if measure == Measure::Martingale {
            assert!(within(stats.terminal_discounted_stock, 100.0, 3.0), "{stats:?}");
        }
    }
}

#[test]
fn map_stopping_examples() {
    let rec = EmbeddingRecord { theta: vec![0.0, 0.3, 0.7, 1.4], signs: vec![1, -1, 1] };
    assert_eq!(map_stopping(|_| false, &rec, 3, 1.0), 1.0);
    assert_eq!(map_stopping(|_| true, &rec, 3, 1.0), 0.0);
    assert_eq!(map_stopping(|p| p.len() == 2, &rec, 3, 1.0), 0.7);
    assert_eq!(map_stopping(|p| p.len() == 3, &rec, 3, 1.0), 1.0);
    assert_eq!(map_stopping(|p| p.len() == 3, &rec, 5, 1.0), 1.0);
}

#[test]
fn mapped_portfolios() {
    let sim = Simulator::new(&model(), 16, &SimConfig::default()).unwrap();
    let sp = sim.sp;
    let (path, rec, _) = sim.simulate(2, ExitLimit { exits: 16, until: 1.0 });
    let idle = map_strategy(&HedgeStrategy::idle(3.0, &sp), &rec);
    for t in [0.0, 0.2, 0.5, 1.0] {
        assert_eq!(idle.value_at(t, sim.discounted_stock(path.at(t))), 3.0);
    }

    // one discounted stock unit over the first period only
    let hold = HedgeStrategy::from_fn(
        2.0,
        &sp,
        move |p: &[i8], _| if p.is_empty() { sp.discounted_price(0) } else { 0.0 },
        |_, _| false,
    );
    let mapped = map_strategy(&hold, &rec);
    let before = 0.5 * rec.theta[1];
    let stock = sim.discounted_stock(path.at(before));
    assert!((mapped.value_at(before, stock) - (2.0 + stock - 100.0)).abs() < 1e-12);
    let frozen = 2.0 + sp.discounted_price(i64::from(rec.signs[0])) - 100.0;
    let after = 0.5 * (rec.theta[1] + rec.theta[2]);
    assert!((mapped.value_at(after, sim.discounted_stock(path.at(after))) - frozen).abs() < 1e-12);
}

#[test]
fn perfect_hedge_transfers_to_exit_times() {
    let m = model();
    let b = BarrierSpec::knock_out(80.0, UpperBarrier::Finite(125.0)).unwrap();
    let c = Contract::new(PayoffFamily::GamePut { strike: 100.0, delta: 4.0 }, b);
    let n = 24;
    let sol = Arc::new(solve_game(&m, n, &c, Mode::Recombining).unwrap());
    let hedge = perfect_hedge(sol.clone(), sol.value).unwrap();
    let sim = Simulator::new(&m, n, &SimConfig::default()).unwrap();
    for i in 0..40 {
        let (path, rec, _) = sim.simulate(i, ExitLimit { exits: n, until: f64::INFINITY });
        let mapped = map_strategy(&hedge, &rec);
        let lattice = hedge.replay(&rec.signs);
        for k in 0..=rec.exits() {
            let th = rec.theta[k];
            let stock = sim.discounted_stock(path.at(th));
            assert!((mapped.value_at(th, stock) - lattice.values[k]).abs() < 1e-9);
        }
        // just before an exit is snapped, the continuous value is close to the lattice one
        for k in 1..=rec.exits() {
            let j = (rec.theta[k] / path.dt).floor() as usize;
            let t = j as f64 * path.dt;
            if t <= rec.theta[k - 1] {
                continue;
            }
            let v = mapped.value_at(t, sim.discounted_stock(path.values[j]));
            assert!((v - lattice.values[k]).abs() < 0.1, "{v} vs {}", lattice.values[k]);
        }
    }
}

#[test]
fn bs_payoff_examples() {
    let m = model();
    let sim = Simulator::new(&m, 10, &SimConfig::default()).unwrap();
    let (path, _, _) = sim.simulate(1, ExitLimit { exits: usize::MAX, until: 1.0 });
    let put = PayoffFamily::GamePut { strike: 110.0, delta: 2.0 };
    let far = Contract::new(put, BarrierSpec::knock_out(1.0, UpperBarrier::Finite(1e6)).unwrap());
    let s_t = m.s0 * (m.r + m.kappa * path.at(1.0)).exp();
    let q = bs_discounted_payoff(&m, &far, &path, 1.0, 1.0);
    assert!((q - (-m.r).exp() * (110.0 - s_t).max(0.0)).abs() < 1e-12);

    let tight = BarrierSpec::knock_out(99.9, UpperBarrier::Finite(100.1)).unwrap();
    let ko = Contract::new(put, tight);
    assert_eq!(bs_discounted_payoff(&m, &ko, &path, 0.5, 0.6), 0.0);
    assert_eq!(bs_discounted_payoff(&m, &ko, &path, 0.6, 0.5), 0.0);

    let ki = Contract::new(put, tight.with_direction(Direction::KnockIn));
    for t in [0.0, 0.3, 0.9] {
        let out = BsPayoffs::new(&m, &ko, &path, sim.horizon_index()).buyer(t);
        let inn = BsPayoffs::new(&m, &ki, &path, sim.horizon_index()).buyer(t);
        let s = m.s0 * (m.r * path.index_at(t) as f64 * path.dt + m.kappa * path.at(t)).exp();
        assert!((out + inn - (-m.r * t).exp() * (110.0 - s).max(0.0)).abs() < 1e-12);
    }
}

#[test]
fn shortfall_mc_examples() {
    let m = MarketModel::new(100.0, 0.03, 0.0, 0.25, 1.0);
    let c = Contract::new(
        PayoffFamily::GamePut { strike: 100.0, delta: 4.0 },
        BarrierSpec::knock_out(85.0, UpperBarrier::Infinite).unwrap(),
    );
    let n = 20;
    let sp = step_params(&m, n).unwrap();
    let cfg = SimConfig { paths: 4000, seed: 5, dt_divisor: 50.0, ..Default::default() };

    let rich = HedgeStrategy::idle(200.0, &sp);
    let target = McTarget { model: &m, contract: &c, strategy: &rich, game: None };
    let est = estimate_shortfall_mc(&target, &cfg, &CandidateFlags::default()).unwrap();
    assert_eq!(est.max.estimate, 0.0);
    assert_eq!(est.candidates.len(), 11 + 1 + 4);

    let none = CandidateFlags { saddle: false, deterministic: false, barrier: false, theta: false };
    assert!(matches!(estimate_shortfall_mc(&target, &cfg, &none), Err(Error::NoCandidates)));

    // zero capital held to maturity: the estimate is the gated discounted payoff
    let broke = HedgeStrategy::idle(0.0, &sp);
    let target = McTarget { model: &m, contract: &c, strategy: &broke, game: None };
    let only_fixed = CandidateFlags { saddle: false, deterministic: true, barrier: false, theta: false };
    let est = estimate_shortfall_mc(&target, &cfg, &only_fixed).unwrap();
    let at_t = est.candidates.iter().find(|e| e.candidate == "t=10/10T").unwrap();
    let sim = Simulator::new(&m, n, &SimConfig { seed: 77, ..cfg }).unwrap();
    let direct: Vec<f64> = simulate_map(cfg.paths, |i| {
        let (path, _, _) = sim.simulate(i, ExitLimit { exits: usize::MAX, until: 1.0 });
        BsPayoffs::new(&m, &c, &path, sim.horizon_index()).buyer(1.0)
    });
    let (mean, se) = mean_and_se(&direct);
    assert!((at_t.estimate - mean).abs() <= 3.0 * (se * se + at_t.std_err * at_t.std_err).sqrt());
}

#[test]
fn shortfall_mc_is_thread_count_independent() {
    let m = model();
    let c = Contract::new(PayoffFamily::GameCall { strike: 100.0, delta: 3.0 }, BarrierSpec::none());
    let sol = Arc::new(solve_game(&m, 12, &c, Mode::Recombining).unwrap());
    let hedge = perfect_hedge(sol.clone(), sol.value).unwrap();
    let target = McTarget { model: &m, contract: &c, strategy: &hedge, game: Some(&sol) };
    let cfg = SimConfig { paths: 300, dt_divisor: 40.0, ..Default::default() };
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| estimate_shortfall_mc(&target, &cfg, &CandidateFlags::default()).unwrap())
    };
    assert_eq!(run(1), run(3));
}

#[test]
fn mean_and_se_basics() {
    let (m, s) = mean_and_se(&[1.0, 2.0, 3.0]);
    assert_eq!(m, 2.0);
    assert!((s - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
    assert_eq!(mean_and_se(&[4.0]), (4.0, 0.0));
}
