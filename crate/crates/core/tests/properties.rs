mod common;

use std::sync::OnceLock;

use capfield::background::{firm_density, BackgroundState};
use capfield::interactions::g22;
use capfield::model::{eval_f2hat, FirmCoord, InvestorCoord, ModelSpec, SectorGrid};
use capfield::numerics::trapezoid;
use capfield::specfun::pcf;
use capfield::transition::{drift_firm, g1, g2, FirmQuery, InvestorQuery};
use proptest::prelude::*;

use common::{cobb_douglas_spec, grid, sloped_spec, solve_on};

fn sloped() -> &'static (ModelSpec, SectorGrid, BackgroundState) {
    static CELL: OnceLock<(ModelSpec, SectorGrid, BackgroundState)> = OnceLock::new();
    CELL.get_or_init(|| {
        let spec = sloped_spec(0.3);
        let g = grid(1.0, 9, 6.0);
        let bg = solve_on(&spec, &g);
        (spec, g, bg)
    })
}

fn curved() -> &'static (ModelSpec, SectorGrid, BackgroundState) {
    static CELL: OnceLock<(ModelSpec, SectorGrid, BackgroundState)> = OnceLock::new();
    CELL.get_or_init(|| {
        let spec = cobb_douglas_spec(0.5);
        let g = grid(2.0, 9, 5.0);
        let bg = solve_on(&spec, &g);
        (spec, g, bg)
    })
}

fn firm_query(ki: f64, xi: f64, kf: f64, xf: f64) -> FirmQuery {
    FirmQuery {
        initial: FirmCoord::new(ki, xi, 1.0),
        target: FirmCoord::new(kf, xf, 1.0),
        alpha: 1.0,
    }
}

fn investor_query(ki: f64, xi: f64, kf: f64, xf: f64) -> InvestorQuery {
    InvestorQuery {
        initial: InvestorCoord::new(ki, xi),
        target: InvestorCoord::new(kf, xf),
        alpha: 1.0,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn pcf_three_term_recurrence(p in -5.0f64..9.0, z in -10.0f64..10.0) {
        let (lo, mid, hi) = (pcf(p - 1.0, z).unwrap(), pcf(p, z).unwrap(), pcf(p + 1.0, z).unwrap());
        let scale = hi.abs().max((z * mid).abs()).max((p * lo).abs());
        prop_assume!(scale > 1e-250);
        prop_assert!((hi - z * mid + p * lo).abs() <= 1e-8 * scale);
    }

    #[test]
    fn pcf_low_orders_are_gaussian_times_hermite(z in -10.0f64..10.0) {
        let g = (-z * z / 4.0).exp();
        prop_assert!((pcf(0.0, z).unwrap() - g).abs() <= 1e-12 * g);
        prop_assert!((pcf(1.0, z).unwrap() - z * g).abs() <= 1e-12 * (z * g).abs().max(1e-300));
    }

    #[test]
    fn investor_pair_factorizes(
        a in (0.3f64..5.0, -0.9f64..0.9, 0.3f64..5.0, -0.9f64..0.9),
        b in (0.3f64..5.0, -0.9f64..0.9, 0.3f64..5.0, -0.9f64..0.9),
    ) {
        let (spec, _, bg) = sloped();
        let qa = investor_query(a.0, a.1, a.2, a.3);
        let qb = investor_query(b.0, b.1, b.2, b.3);
        let joint = g22(spec, bg, &qa, &qb).unwrap().value;
        let prod = g2(spec, bg, &qa).unwrap().value() * g2(spec, bg, &qb).unwrap().value();
        prop_assert!((joint - prod).abs() <= 1e-15 * prod.abs());
    }

    #[test]
    fn drift_has_endpoint_swap_parity(
        ki in 0.3f64..4.0, xi in -1.8f64..1.8, kf in 0.3f64..4.0, xf in -1.8f64..1.8,
    ) {
        let (spec, _, bg) = curved();
        let fwd = drift_firm(spec, bg, &firm_query(ki, xi, kf, xf)).unwrap();
        let back = drift_firm(spec, bg, &firm_query(kf, xf, ki, xi)).unwrap();
        prop_assert!((fwd.0 + back.0).abs() <= 1e-10 * (1.0 + fwd.0.abs()));
        prop_assert!((fwd.1 + back.1).abs() <= 1e-10 * (1.0 + fwd.1.abs()));
        prop_assert!((fwd.2 - back.2).abs() <= 1e-10 * (1.0 + fwd.2.abs()));
    }

    #[test]
    fn coincident_endpoints_have_unit_weight(k in 0.3f64..4.0, x in -1.8f64..1.8) {
        let (spec, _, bg) = curved();
        let r = g1(spec, bg, &firm_query(k, x, k, x)).unwrap();
        prop_assert!(r.log_value.abs() < 1e-12);
    }

    #[test]
    fn firm_density_is_nonnegative(d in 0.0f64..5.0, tau in 0.1f64..3.0) {
        let (spec, g, bg) = curved();
        let mut s = spec.clone();
        s.tau = tau;
        for v in firm_density(&s, g, &bg.k_x, d).unwrap() {
            prop_assert!(v >= 0.0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn attractiveness_scale_drops_out_of_the_allocation(c in 0.1f64..10.0, k in 0.3f64..4.0, x in -1.8f64..1.8) {
        let (spec, g, bg) = curved();
        let scaled = spec.with_scaled_attractiveness(c);
        let bg_c = solve_on(&scaled, g);
        let at = FirmCoord::new(k, x, 1.0);
        let (a, b) = (eval_f2hat(spec, bg, &at).unwrap(), eval_f2hat(&scaled, &bg_c, &at).unwrap());
        prop_assert!((a - b).abs() <= 1e-10 * a.abs(), "{} vs {}", a, b);
    }

    #[test]
    fn return_shift_leaves_g1_unchanged(
        c in -1.0f64..3.0,
        ki in 0.3f64..4.0, xi in -0.9f64..0.9, kf in 0.3f64..4.0, xf in -0.9f64..0.9,
    ) {
        let (spec, g, bg) = sloped();
        let shifted = spec.with_shifted_return(c);
        let bg_c = solve_on(&shifted, g);
        let q = firm_query(ki, xi, kf, xf);
        let (a, b) = (g1(spec, bg, &q).unwrap().log_value, g1(&shifted, &bg_c, &q).unwrap().log_value);
        prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()), "{} vs {}", a, b);
    }
}

#[test]
fn invested_capital_matches_physical_capital() {
    // Independent check: integrate the investor density times capital per sector.
    let (_, g, bg) = curved();
    for j in 0..g.nx() {
        if !bg.active(j) {
            continue;
        }
        let khat: Vec<f64> = g.khat().iter().zip(&bg.psihat2[j]).map(|(k, d)| k * d).collect();
        let invested = trapezoid(g.khat(), &khat);
        assert!((invested - bg.khat_x[j]).abs() <= 1e-10 * bg.khat_x[j]);
        let physical = bg.k_x[j] * bg.psi2_x[j];
        assert!((invested - physical).abs() <= 1e-6 * physical, "sector {j}");
    }
}
