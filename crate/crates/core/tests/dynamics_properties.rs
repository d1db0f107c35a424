use fastgate::dynamics::{
    fit_bound, fit_bound_window, fit_loglog_slope, integrate_flow, run_discrete, FlowConfig,
    Method, ToyProblem, Trajectory,
};
use fastgate::{GateKind, GateTag};

const SIG: GateTag = GateTag::Gate(GateKind::Sigmoid);
const SOFT: GateTag = GateTag::Gate(GateKind::NormalizedSoftsign);
const FAST: GateTag = GateTag::Gate(GateKind::Fast);

fn flow(gate: GateTag, tau_end: f64) -> Trajectory<f64> {
    let p = ToyProblem::<f64>::new(gate, 10);
    integrate_flow(&p, &p.default_start(), tau_end, &FlowConfig::default()).unwrap()
}

fn final_gap(t: &Trajectory<f64>) -> f64 {
    *t.effective_one_minus().last().unwrap()
}

#[test]
fn power_law_rates() {
    let sig = flow(SIG, 1e6);
    let soft = flow(SOFT, 1e6);
    let s_sig = fit_loglog_slope(&sig, 1e3, 1e6).unwrap();
    let s_soft = fit_loglog_slope(&soft, 1e3, 1e6).unwrap();
    assert!((s_sig + 1.0).abs() <= 0.1, "{s_sig}");
    assert!((s_soft + 1.0 / 3.0).abs() <= 0.05, "{s_soft}");

    // A genuine power law: the slope does not drift between windows.
    let a = fit_loglog_slope(&sig, 1e3, 1e5).unwrap();
    let b = fit_loglog_slope(&sig, 1e4, 1e6).unwrap();
    assert!((a - b).abs() <= 0.05, "{a} vs {b}");

    let fit = fit_bound_window(&sig, SIG, 1e4, 1e6).unwrap();
    assert!(fit.rms_log_residual <= 0.15, "{}", fit.rms_log_residual);

    let own = fit_bound(&soft, SOFT).unwrap();
    let wrong = fit_bound(&soft, SIG).unwrap();
    assert!(
        wrong.rms_log_residual > 3.0 * own.rms_log_residual,
        "{} vs {}",
        wrong.rms_log_residual,
        own.rms_log_residual
    );
}

#[test]
fn refine_has_sigmoid_order_with_better_constant() {
    let sig = flow(SIG, 1e6);
    let refine = flow(GateTag::REFINE, 1e6);
    let s_sig = fit_loglog_slope(&sig, 1e3, 1e6).unwrap();
    let s_ref = fit_loglog_slope(&refine, 1e3, 1e6).unwrap();
    assert!((s_ref - s_sig).abs() <= 0.1, "{s_ref} vs {s_sig}");
    let q_sig = sig.one_minus_at(1e4).unwrap();
    let q_ref = refine.one_minus_at(1e4).unwrap();
    assert!(q_ref < q_sig, "{q_ref} vs {q_sig}");
}

#[test]
fn fast_gate_converges_faster() {
    let sig = flow(SIG, 1e4);
    let fast = flow(FAST, 1e4);
    assert!(fast.one_minus_at(1e4).unwrap() < sig.one_minus_at(1e4).unwrap());
    let fit = fit_bound(&fast, FAST).unwrap();
    assert!(fit.rms_log_residual <= 0.3, "{}", fit.rms_log_residual);
}

#[test]
fn gradient_descent_tracks_flow() {
    for gate in [SIG, SOFT, FAST] {
        let p = ToyProblem::<f64>::new(gate, 10);
        let gd = run_discrete(&p, &p.default_start(), Method::GradientDescent, 1.0, 2000).unwrap();
        let fl = integrate_flow(&p, &p.default_start(), 2000.0, &FlowConfig::default()).unwrap();
        let mut worst = 0.0f64;
        for k in 10..=2000 {
            let f_flow = 1.0 - fl.one_minus_interp(k as f64).unwrap();
            worst = worst.max((gd.fs[k] - f_flow).abs());
        }
        assert!(worst <= 0.05, "{gate}: {worst}");
    }
}

#[test]
fn fast_wins_under_adam() {
    let gates = [SIG, SOFT, FAST, GateTag::REFINE];
    let gaps: Vec<f64> = gates
        .iter()
        .map(|&g| {
            let p = ToyProblem::<f64>::new(g, 30);
            final_gap(&run_discrete(&p, &p.default_start(), Method::Adam, 0.01, 20_000).unwrap())
        })
        .collect();
    for (g, q) in gates.iter().zip(&gaps) {
        assert!(gaps[2] <= *q, "fast {} vs {g} {q}", gaps[2]);
    }
}

#[test]
fn gate_ranking_is_optimizer_independent() {
    // Fast <= Refine <= Sigmoid <= Softsign in final 1 - f.
    let order = [FAST, GateTag::REFINE, SIG, SOFT];
    let budget = 10_000;
    let runs: [(Method, f64); 4] = [
        (Method::Flow, 0.0),
        (Method::GradientDescent, 1.0),
        (Method::RmsProp, 0.01),
        (Method::Adam, 0.01),
    ];
    for (method, lr) in runs {
        let gaps: Vec<f64> = order
            .iter()
            .map(|&g| {
                let p = ToyProblem::<f64>::new(g, 10);
                let y0 = p.default_start();
                let t = match method {
                    Method::Flow => {
                        integrate_flow(&p, &y0, budget as f64, &FlowConfig::default()).unwrap()
                    }
                    m => run_discrete(&p, &y0, m, lr, budget).unwrap(),
                };
                final_gap(&t)
            })
            .collect();
        assert!(
            gaps.windows(2).all(|w| w[0] <= w[1]),
            "{}: {gaps:?}",
            method.name()
        );
    }
}

#[test]
fn integration_is_converged() {
    for gate in [SIG, SOFT, FAST, GateTag::REFINE] {
        let p = ToyProblem::<f64>::new(gate, 10);
        let coarse = integrate_flow(&p, &p.default_start(), 1e4, &FlowConfig::default()).unwrap();
        let fine_cfg = FlowConfig {
            rel_tol: 0.5e-8,
            ..FlowConfig::default()
        };
        let fine = integrate_flow(&p, &p.default_start(), 1e4, &fine_cfg).unwrap();
        assert_eq!(coarse.len(), fine.len());
        let worst = coarse
            .effective()
            .iter()
            .zip(fine.effective())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-6, "{gate}: {worst}");
    }
}

#[test]
fn monotone_under_flow_for_every_tag() {
    for gate in [
        SIG,
        SOFT,
        FAST,
        GateTag::Gate(GateKind::IteratedFast),
        GateTag::REFINE,
    ] {
        let t = flow(gate, 1e5);
        assert!(t.effective().windows(2).all(|w| w[1] >= w[0]), "{gate}");
        assert!(t.taus.windows(2).all(|w| w[1] > w[0]));
    }
}
