use std::sync::OnceLock;

use faer::Mat;

use volterra_ghd::dos::{
    el_residual, functional, sigma_by_beta_derivative, sigma_from_dos, solve_el_with_kernel, DosSolution, SolverParams,
};
use volterra_ghd::ensembles::GgeParams;
use volterra_ghd::ghd::{
    b0_direct, compute_b, compute_c, euler_scale_curve, mean_current_integral, DressedCharges, DressingOperator,
    GhdSummary,
};
use volterra_ghd::grid::RadialGrid;
use volterra_ghd::kernel::assemble_t;
use volterra_ghd::lattice::CurrentConvention;
use volterra_ghd::md::mean_current;
use volterra_ghd::special::{kappa_quadratic, mu_quadratic};
use volterra_ghd::whittaker::rho_whittaker;

const BETA: f64 = 1.5;

struct Fixture {
    k: Mat<f64>,
    sol: DosSolution,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let grid = RadialGrid::new(6.0, 600).unwrap();
        let k = assemble_t(&grid);
        let sol =
            solve_el_with_kernel(&GgeParams::quadratic(BETA).unwrap(), &grid, &k, &SolverParams::default()).unwrap();
        Fixture { k, sol }
    })
}

fn charges() -> (DressingOperator, DressedCharges) {
    let f = fixture();
    let op = DressingOperator::new(&f.sol, &f.k).unwrap();
    let ch = DressedCharges::compute(&f.sol, &op, 2).unwrap();
    (op, ch)
}

#[test]
fn solve_converges_to_normalized_density() {
    let f = fixture();
    assert!(f.sol.converged);
    assert!((f.sol.total_mass() / BETA - 1.0).abs() < 1e-12);
    assert!(el_residual(&f.sol, &f.k) < 1e-8);
    assert!((f.sol.mu - mu_quadratic(BETA)).abs() < 1e-3);
}

#[test]
fn solution_minimizes_the_functional() {
    let f = fixture();
    let g = &f.sol.grid;
    let base = functional(&f.sol.params, g, &f.k, &f.sol.mass);
    let shapes: [fn(f64) -> f64; 3] = [|w| w * w, |w| (2.0 * w).sin(), |w| -(w + 0.1).ln()];
    for shape in shapes {
        for eps in [0.1, -0.1] {
            let mut p: Vec<f64> = f.sol.mass.iter().zip(&g.nodes).map(|(p, w)| p * (eps * shape(*w)).exp()).collect();
            let total: f64 = p.iter().sum();
            p.iter_mut().for_each(|v| *v *= BETA / total);
            assert!(functional(&f.sol.params, g, &f.k, &p) > base);
        }
    }
}

#[test]
fn density_matches_closed_form() {
    let f = fixture();
    let rho = f.sol.rho();
    for (j, &w) in f.sol.grid.nodes.iter().enumerate() {
        if !(0.3..=3.5).contains(&w) {
            continue;
        }
        let want = rho_whittaker(BETA, w).unwrap();
        assert!((rho[j] / want - 1.0).abs() < 1e-3, "w = {w}: {} vs {want}", rho[j]);
    }
}

#[test]
fn beta_derivative_matches_dressing_route() {
    let f = fixture();
    let (op, _) = charges();
    let sr = sigma_from_dos(&f.sol, &op).unwrap();
    assert!((sr.kappa / kappa_quadratic(BETA) - 1.0).abs() < 1e-3);
    let deriv = sigma_by_beta_derivative(&f.sol.params, &f.sol.grid, &f.k, &SolverParams::default(), 1e-3).unwrap();
    let scale = deriv.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    for (d, s) in deriv.iter().zip(&sr.sigma_mass) {
        assert!((d - sr.kappa * s).abs() < 1e-5 * scale);
    }
}

#[test]
fn dressing_round_trips() {
    let (op, _) = charges();
    let g = &fixture().sol.grid;
    let psi: Vec<f64> = g.nodes.iter().map(|w| (w * 1.3).sin() + w * w).collect();
    let back = op.undress(&op.dress(&psi));
    for (a, b) in back.iter().zip(&psi) {
        assert!((a - b).abs() < 1e-12 * b.abs().max(1.0));
    }
}

#[test]
fn drude_matrix_is_symmetric_and_consistent() {
    let (_, ch) = charges();
    let c = compute_c(&ch);
    let b = compute_b(&ch, &c);
    let direct = b0_direct(&ch);
    for n in 0..b.len() {
        assert!((direct[n] - b[0][n]).abs() < 1e-3 * b[0][n].abs().max(1.0), "n = {n}");
        for m in 0..b.len() {
            assert_eq!(b[m][n], b[n][m]);
        }
    }
}

#[test]
fn mean_current_is_half_beta_squared() {
    let (_, ch) = charges();
    let g = &fixture().sol.grid;
    let v = mean_current_integral(&ch, &g.log_nodes);
    assert!((v / (0.5 * BETA * BETA) - 1.0).abs() < 1e-3, "{v}");
    // the same number from sampled states, in the continuity normalization
    let params = GgeParams::quadratic(BETA).unwrap();
    let (mc, se) = mean_current(&params, 64, 1, CurrentConvention::Continuity, 4000, 11).unwrap();
    assert!((mc - v).abs() < 3.0 * se, "{mc} ± {se} vs {v}");
    let (lax, _) = mean_current(&params, 64, 1, CurrentConvention::Lax, 4000, 11).unwrap();
    assert!((lax + 0.5 * mc).abs() < 1e-12 * mc.abs());
}

#[test]
fn velocity_is_monotone_and_shock_is_ahead() {
    let (_, ch) = charges();
    assert!(ch.non_monotone.is_empty());
    assert!(ch.xi0() > 0.0);
    let xi = ch.xi_coordinate();
    assert!(xi.iter().all(|x| *x <= ch.xi0() + 1e-9));
}

#[test]
fn curve_is_sorted_and_vanishes_beyond_support() {
    let f = fixture();
    let (_, ch) = charges();
    let curve = euler_scale_curve(&f.sol, &ch, 0, 0).unwrap();
    assert!(curve.points.windows(2).all(|p| p[0].xi <= p[1].xi));
    assert_eq!(curve.interpolate(curve.points[0].xi - 1.0), 0.0);
    assert_eq!(curve.interpolate(curve.xi0 + 1.0), 0.0);
    assert!(euler_scale_curve(&f.sol, &ch, 0, 5).is_err());
}

#[test]
fn summary_round_trips_through_json() {
    let f = fixture();
    let (_, ch) = charges();
    let s = GhdSummary::new(&f.sol, &ch);
    let back: GhdSummary = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
    assert_eq!(back.c, s.c);
    assert_eq!(back.xi0, s.xi0);
}
