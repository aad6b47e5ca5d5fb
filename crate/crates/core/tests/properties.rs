use std::collections::HashMap;
use std::sync::Arc;

use proptest::prelude::*;
use psi_caputo::analysis::{
    a_priori_bound, gronwall_bound, stability_experiment, uh_gamma, uhr_b, SolveSettings,
    StabilityMode,
};
use psi_caputo::expr::{parse, BinOp, Expr, Func};
use psi_caputo::frac_ops::{caputo_derivative_trace, frac_integral_trace, SampledFunction};
use psi_caputo::solver::{check_contraction, LipschitzData, PicardSolver, ProblemSpec};
use psi_caputo::special::{gamma, mittag_leffler};
use psi_caputo::{FractionalOrder, Grid, PsiFunction, Spacing};

fn arb_expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        (0.0..100.0f64).prop_map(Expr::Num),
        (0u32..1000).prop_map(|k| Expr::Num(k as f64)),
        Just(Expr::Pi),
        prop::sample::select(vec!["z", "theta", "w"]).prop_map(|v| Expr::Var(v.to_string())),
    ];
    leaf.prop_recursive(5, 48, 3, |inner| {
        let op = prop::sample::select(vec![
            BinOp::Add,
            BinOp::Sub,
            BinOp::Mul,
            BinOp::Div,
            BinOp::Pow,
        ]);
        let unary = prop::sample::select(vec![
            Func::Sin,
            Func::Cos,
            Func::Exp,
            Func::Ln,
            Func::Sqrt,
            Func::Abs,
        ]);
        let binary = prop::sample::select(vec![Func::Pow, Func::Min, Func::Max]);
        prop_oneof![
            inner.clone().prop_map(|e| Expr::Neg(Box::new(e))),
            (op, inner.clone(), inner.clone()).prop_map(|(o, a, b)| Expr::Binary(
                o,
                Box::new(a),
                Box::new(b)
            )),
            (unary, inner.clone()).prop_map(|(f, a)| Expr::Call(f, vec![a])),
            (binary, inner.clone(), inner).prop_map(|(f, a, b)| Expr::Call(f, vec![a, b])),
        ]
    })
}

fn arb_psi() -> impl Strategy<Value = PsiFunction> {
    prop_oneof![
        Just(PsiFunction::Identity),
        (0.2..3.0f64).prop_map(|c| PsiFunction::shifted_log(c).unwrap()),
        (0.5..2.5f64).prop_map(|s| PsiFunction::power(s).unwrap()),
    ]
}

fn arb_alpha() -> impl Strategy<Value = FractionalOrder> {
    (0.05..0.95f64).prop_map(|a| FractionalOrder::new(a).unwrap())
}

/// Orders for which E_α stays representable on the ranges used below;
/// E_α(x) grows like exp(x^{1/α}).
fn moderate_alpha() -> impl Strategy<Value = FractionalOrder> {
    (0.3..0.95f64).prop_map(|a| FractionalOrder::new(a).unwrap())
}

fn grid(b: f64, n: usize, psi: PsiFunction) -> Arc<Grid> {
    Arc::new(Grid::new(b, n, Spacing::UniformInZ, psi).unwrap())
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #[test]
    fn display_reparses_to_same_tree(e in arb_expr()) {
        let text = e.to_string();
        prop_assert_eq!(parse(&text).unwrap(), e, "{}", text);
    }

    #[test]
    fn compiled_matches_tree_eval(e in arb_expr(), z in -3.0..3.0f64, t in -3.0..3.0f64, w in -3.0..3.0f64) {
        let bindings: HashMap<String, f64> =
            [("z", z), ("theta", t), ("w", w)].into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        let tree = e.eval(&bindings);
        let compiled = e.compile(&["z", "theta", "w"]).unwrap().eval(&[z, t, w]);
        match (tree, compiled) {
            (Ok(a), Ok(b)) => prop_assert_eq!(a.to_bits(), b.to_bits()),
            (Err(_), Err(_)) => {}
            (a, b) => prop_assert!(false, "tree {:?} vs compiled {:?}", a, b),
        }
    }

    #[test]
    fn gamma_recurrence(x in 0.1..20.0f64) {
        prop_assert!(rel_close(gamma(x + 1.0).unwrap(), x * gamma(x).unwrap(), 1e-12));
    }

    #[test]
    fn mittag_leffler_one_is_exp(x in 0.0..5.0f64) {
        prop_assert!(rel_close(mittag_leffler(1.0, x).unwrap(), x.exp(), 1e-12));
    }

    #[test]
    fn mittag_leffler_increasing(a in 0.3..1.0f64, x in 0.0..4.0f64, dx in 1e-3..1.0f64) {
        prop_assert!(mittag_leffler(a, x + dx).unwrap() > mittag_leffler(a, x).unwrap());
    }

    #[test]
    fn grid_increments_strictly_increase(psi in arb_psi(), b in 0.1..5.0f64, n in 2usize..200, by_psi in any::<bool>()) {
        let spacing = if by_psi { Spacing::UniformInPsi } else { Spacing::UniformInZ };
        let g = Grid::new(b, n, spacing, psi).unwrap();
        prop_assert_eq!(g.nodes()[0], 0.0);
        prop_assert_eq!(g.psi_increments()[0], 0.0);
        prop_assert!(g.psi_increments().windows(2).all(|w| w[1] > w[0]));
        prop_assert!(g.nodes().windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn integral_is_linear(
        psi in arb_psi(), alpha in arb_alpha(),
        a in -5.0..5.0f64, b in -5.0..5.0f64, k in 0.5..4.0f64,
    ) {
        let g = grid(1.5, 64, psi);
        let u = SampledFunction::from_fn(g.clone(), |z| (k * z).sin()).unwrap();
        let v = SampledFunction::from_fn(g.clone(), |z| z * z - k).unwrap();
        let combo = u.with_values(u.values().iter().zip(v.values()).map(|(x, y)| a * x + b * y).collect()).unwrap();
        let iu = frac_integral_trace(alpha, &u).unwrap();
        let iv = frac_integral_trace(alpha, &v).unwrap();
        let ic = frac_integral_trace(alpha, &combo).unwrap();
        for i in 0..g.len() {
            let want = a * iu.values()[i] + b * iv.values()[i];
            prop_assert!((ic.values()[i] - want).abs() <= 1e-11 * (1.0 + want.abs()));
        }
        prop_assert_eq!(ic.values()[0], 0.0);
    }

    #[test]
    fn integral_preserves_order(psi in arb_psi(), alpha in arb_alpha(), vals in prop::collection::vec(0.0..10.0f64, 33)) {
        let g = grid(1.0, 32, psi);
        let v = SampledFunction::new(g.clone(), vals.clone()).unwrap();
        let bigger = v.with_values(vals.iter().map(|x| x + 1.0).collect()).unwrap();
        let iv = frac_integral_trace(alpha, &v).unwrap();
        let ib = frac_integral_trace(alpha, &bigger).unwrap();
        prop_assert!(iv.values().iter().all(|&x| x >= 0.0));
        prop_assert!(iv.values().iter().zip(ib.values()).all(|(a, b)| a <= b));
    }

    #[test]
    fn integral_of_constant_is_exact(psi in arb_psi(), alpha in arb_alpha(), c in -10.0..10.0f64) {
        let g = grid(2.0, 48, psi);
        let v = SampledFunction::constant(g.clone(), c).unwrap();
        let iv = frac_integral_trace(alpha, &v).unwrap();
        let a = alpha.get();
        let scale = 1.0 / gamma(a + 1.0).unwrap();
        for (i, &u) in g.psi_increments().iter().enumerate() {
            prop_assert!((iv.values()[i] - c * u.powf(a) * scale).abs() <= 1e-12 * (1.0 + c.abs()));
        }
    }

    #[test]
    fn derivative_of_constant_vanishes(psi in arb_psi(), alpha in arb_alpha(), c in -10.0..10.0f64) {
        let g = grid(1.0, 40, psi);
        let d = caputo_derivative_trace(alpha, &SampledFunction::constant(g, c).unwrap()).unwrap();
        prop_assert!(d.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn uh_gamma_monotone(
        alpha in moderate_alpha(), psi in arb_psi(),
        w1 in 0.0..1.0f64, w2 in 0.0..1.0f64, b in 0.1..2.0f64, step in 0.01..0.25f64,
    ) {
        let base = LipschitzData::user(w1, w2, 0.0).unwrap();
        let g0 = uh_gamma(alpha, &psi, b, &base).unwrap();
        for k in 1..=4 {
            let d = step * k as f64;
            let up_w1 = LipschitzData::user(w1 + d, w2, 0.0).unwrap();
            let up_w2 = LipschitzData::user(w1, w2 + d, 0.0).unwrap();
            prop_assert!(uh_gamma(alpha, &psi, b, &up_w1).unwrap() >= g0);
            prop_assert!(uh_gamma(alpha, &psi, b, &up_w2).unwrap() >= g0);
            prop_assert!(uh_gamma(alpha, &psi, b + d, &base).unwrap() >= g0);
        }
    }

    #[test]
    fn uh_gamma_monotone_through_span_power(
        alpha in moderate_alpha(), a in 0.05..0.6f64, da in 0.01..0.1f64, b in 1.0..2.5f64, w1 in 0.0..1.0f64,
    ) {
        // With ψ = z, raising the span to α' instead of α is the same as
        // evaluating at b' = b^{α'/α}; for spans ≥ 1 this must not decrease γ.
        let psi = PsiFunction::Identity;
        let lip = LipschitzData::user(w1, 0.5, 0.0).unwrap();
        let gammas: Vec<f64> = (0..4)
            .map(|k| uh_gamma(alpha, &psi, b.powf((a + da * k as f64) / alpha.get()), &lip).unwrap())
            .collect();
        prop_assert!(gammas.windows(2).all(|w| w[1] >= w[0]), "{:?}", gammas);
    }

    #[test]
    fn uhr_b_reduces_to_gamma_q3(gq3 in 0.0..5.0f64, w2 in 0.0..3.0f64) {
        let lip = LipschitzData::user(1e-12, w2, 0.0).unwrap();
        prop_assert!((uhr_b(gq3, &lip).unwrap() - gq3).abs() < 1e-9);
    }

    #[test]
    fn gronwall_dominates_eta(alpha in moderate_alpha(), r in 0.0..0.5f64, k in 0.0..3.0f64) {
        let g = grid(1.0, 64, PsiFunction::Identity);
        let eta = SampledFunction::from_fn(g.clone(), |z| 1.0 + k * z).unwrap();
        let rho = SampledFunction::from_fn(g.clone(), |z| r * (1.0 + z)).unwrap();
        let rho2 = rho.with_values(rho.values().iter().map(|x| 2.0 * x).collect()).unwrap();
        let b1 = gronwall_bound(&eta, &rho, alpha).unwrap();
        let b2 = gronwall_bound(&eta, &rho2, alpha).unwrap();
        for i in 0..g.len() {
            prop_assert!(b1.values()[i] >= eta.values()[i]);
            prop_assert!(b2.values()[i] >= b1.values()[i]);
        }
    }
}

/// A contracting problem F = a·sin(θ) + c·w + d, H = k·z·τ·g (|z|, |τ| ≤ 1).
#[derive(Debug, Clone)]
struct Contracting {
    spec: ProblemSpec,
    lip: LipschitzData,
}

fn arb_contracting() -> impl Strategy<Value = Contracting> {
    (
        arb_alpha(),
        -0.4..0.4f64,
        -0.3..0.3f64,
        -1.0..1.0f64,
        -0.5..0.5f64,
        -1.0..1.0f64,
    )
        .prop_filter_map("contracting", |(alpha, a, c, d, k, theta0)| {
            let f = parse(&format!("{a:?}*sin(theta) + {c:?}*w + {d:?}")).unwrap();
            let h = parse(&format!("{k:?}*z*tau*g")).unwrap();
            let spec = ProblemSpec::new(alpha, 1.0, theta0, PsiFunction::Identity, f, h).unwrap();
            // Lipschitz in (theta, w) jointly: max(|a|, |c|); W3 ≤ |d| + |c|·0 since H(·, ·, 0) = 0
            let lip = LipschitzData::user(a.abs().max(c.abs()), k.abs(), d.abs()).unwrap();
            let cert = check_contraction(&spec, &lip).unwrap();
            (cert.l < 0.8).then_some(Contracting { spec, lip })
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn solver_invariants(p in arb_contracting()) {
        let g = grid(1.0, 64, PsiFunction::Identity);
        let solver = PicardSolver::new(&p.spec, g.clone()).unwrap();
        let tol = 1e-11;
        let a = solver.solve(tol, 200).unwrap();
        prop_assert_eq!(a.theta.values()[0], p.spec.theta0());
        prop_assert_eq!(a.sup_diffs.len(), a.iterates);

        let l = check_contraction(&p.spec, &p.lip).unwrap().l;
        for k in 2..a.sup_diffs.len().saturating_sub(1) {
            // below ~1e-13 the ratio is dominated by rounding
            if a.sup_diffs[k] > 1e-13 {
                prop_assert!(a.sup_diffs[k + 1] <= (l + 0.1) * a.sup_diffs[k], "k={} {:?}", k, a.sup_diffs);
            }
        }

        let b = solver.solve_from(&vec![1.0; g.len()], tol, 200).unwrap();
        prop_assert!(a.theta.sup_distance(&b.theta).unwrap() < 10.0 * tol);

        let bound = a_priori_bound(&p.spec, &p.lip).unwrap();
        prop_assert!(a.theta.sup_norm() <= bound);
    }

    #[test]
    fn stability_holds_for_compliant_perturbations(
        p in arb_contracting(), amp in 0.0..1.0f64, freq in 0.0..6.0f64, eps in 0.001..0.1f64,
    ) {
        let g = grid(1.0, 64, PsiFunction::Identity);
        let h = parse(&format!("{:?}*sin({freq:?}*z + 0.3)", amp * eps)).unwrap();
        let settings = SolveSettings { tol: 1e-12, max_iter: 300 };
        let r = stability_experiment(&p.spec, &p.lip, &h, eps, StabilityMode::UH, None, g, settings).unwrap();
        prop_assert!(r.satisfied, "max dev {} bound {}", r.max_deviation(), r.bound[0]);
    }
}
