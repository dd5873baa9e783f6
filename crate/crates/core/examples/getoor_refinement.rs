use dphase::model::*;
use dphase::operators::AssemblyOptions;
use dphase::quadrature::{pv_point_eval, PvOptions};
use dphase::solver::*;

fn main() {
    for cells in [128usize, 256, 512, 1024] {
        let t = std::time::Instant::now();
        let grid = Grid::new(1, cells, 1.0).unwrap();
        let spec = ProblemSpec::new(1, 2.0, 2.0, 0.5, 0.5);
        let k = KernelPair::constant(1.0);
        let exact = GridFunction::from_fn(grid, getoor_profile, Exterior::constant(0.0));
        let c = pv_point_eval(&exact, &k, &spec, cells / 2, &PvOptions::default()).unwrap();
        let f = GridFunction::from_fn(grid, |_| c, Exterior::constant(0.0));
        let dom = Region::ball([0.0, 0.0], 1.0, 1);
        let r = solve_dirichlet(&spec, &k, &dom, grid, &Exterior::constant(0.0), &f, &SolveConfig::default(), &AssemblyOptions::default()).unwrap();
        let u = r.solution();
        let err = u.values.iter().zip(&exact.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        println!("cells {cells} c {c:.6} err {err:.4e} res {:.2e} {:?}", r.final_residual, t.elapsed());
    }
}
