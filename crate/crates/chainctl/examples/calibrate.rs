use chainctl::model::*;
use chainctl::oracle::*;
use chainctl::propagator::*;
use chainctl::three_level::*;
use chainctl::four_level;
use std::time::Instant;

fn main() {
    // 1. stationarity: ascent improvement from sampled u* by segment count
    for &(k, a, t) in &[(1.0, 1.0, 5.0), (1.0, 1.0, 10.0), (5.0, 1.0, 3.0)] {
        let sol = optimal_u(k, a, t).unwrap();
        let bound = efficiency_bound(k, a, t).unwrap();
        for &n in &[32usize, 128, 512] {
            let prob = DiscretizedControlProblem::new(ReducedModel::PolarThree, k, a, t, n).unwrap();
            let init: Vec<f64> = (0..n).map(|j| sol.u_star(t * (j as f64 + 0.5) / n as f64).min(1.0)).collect();
            let start = Instant::now();
            let out = local_ascent(&prob, &init, &AscentOptions::default()).unwrap();
            println!("stationarity k={k} T={t} n={n}: init={:.10} final={:.10} improvement={:.3e} bound={:.10} iters={} ({:?})",
                out.initial_value, out.value, out.improvement(), bound, out.iterations, start.elapsed());
        }
    }

    // 2. STIRAP at k=A=1, T=100, beta=pi/2
    let (k, a, t_large) = (1.0, 1.0, 100.0);
    let sched = stirap_limit_pulses(k, a, t_large, std::f64::consts::FRAC_PI_2, 0.0).unwrap();
    let sys = ChainSystem::three_level(k, a).unwrap();
    let samples: Vec<f64> = (0..=4000).map(|i| t_large * i as f64 / 4000.0).collect();
    let traj = propagate(&sys, &sched, &RealState::ground(3), t_large,
        &PropagateOptions::with_samples(1e-10, samples.clone())).unwrap();
    let pop3 = traj.populations.last().unwrap()[2];
    let amp3 = traj.states.last().unwrap()[2].abs();
    let maxpop2 = traj.populations.iter().map(|p| p[1]).fold(0.0, f64::max);
    let mut maxdev: f64 = 0.0;
    let mut maxdev_rel: f64 = 0.0;
    for (i, &t) in samples.iter().enumerate() {
        if t < 0.1 * t_large || t > 0.9 * t_large { continue; }
        let x = &traj.states[i];
        let ratio_sched = sched.eval(0, t) / sched.eval(1, t);
        let ratio_state = x[2] / x[0];
        let dev = (ratio_state - ratio_sched).abs();
        maxdev = maxdev.max(dev);
        maxdev_rel = maxdev_rel.max(dev / ratio_sched.abs().max(1.0));
    }
    println!("stirap T=100: pop3={pop3:.6} amp3={amp3:.6} maxpop2={maxpop2:.3e} plateau_maxdev={maxdev:.4e} rel={maxdev_rel:.4e}");
    let opt = efficiency_bound(1.0, 1.0, 100.0).unwrap();
    println!("optimal amplitude at T=100: {opt:.6} (pop {:.6})", opt*opt);

    // 3. golden efficiencies
    for &t in &[2.0, 5.0, 10.0, 20.0] {
        let sol = optimal_u(1.0, 1.0, t).unwrap();
        println!("efficiency k=A=1 T={t}: closed={:.15} integrated={:.15}",
            sol.closed_form_efficiency(), efficiency_bound_tol(1.0, 1.0, t, 1e-12).unwrap());
    }

    // 4. four-level criterion 5 values
    let mut prev = 0.0;
    for &t in &[10.0, 20.0, 50.0] {
        let eta = four_level::case2_efficiency(1.0, 1.0, t).unwrap();
        println!("case2 eta(1,1,{t}) = {:.17} delta_prev={:.3e} gap_to_inf={:.3e}",
            eta, eta - prev, (2f64.sqrt()-1.0) - eta);
        prev = eta;
    }

    // 5. chain-bound timing at criterion-7 scale
    let start = Instant::now();
    let prob = DiscretizedControlProblem::new(ReducedModel::ChainFive, 1.0, 1.0, 20.0, 64).unwrap();
    let s = random_search(&prob, 1000, 42).unwrap();
    let refined = local_ascent(&prob, &s.best_controls, &AscentOptions::default()).unwrap();
    println!("five-chain search+ascent: best={:.8} vs eta4={:.8} ({:?})",
        refined.value, four_level::case2_efficiency(1.0,1.0,20.0).unwrap(), start.elapsed());

    // 6. criterion-3 clause 1 timing
    let start = Instant::now();
    for &(k, a, t) in &[(1.0,1.0,5.0),(1.0,1.0,10.0),(5.0,1.0,3.0)] {
        let prob = DiscretizedControlProblem::new(ReducedModel::PolarThree, k, a, t, 32).unwrap();
        let s = random_search(&prob, 1000, 1).unwrap();
        let mut best = local_ascent(&prob, &s.best_controls, &AscentOptions::default()).unwrap().value;
        for i in 0..10u64 {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(100+i);
            let init: Vec<f64> = (0..prob.n_values()).map(|_| rng.random_range(0.0..=1.0)).collect();
            best = best.max(local_ascent(&prob, &init, &AscentOptions::default()).unwrap().value);
        }
        println!("criterion3 ({k},{a},{t}): best={:.9} bound={:.9} margin={:.3e}",
            best, efficiency_bound(k,a,t).unwrap(), efficiency_bound(k,a,t).unwrap() - best);
    }
    println!("criterion3 timing: {:?}", start.elapsed());
}
