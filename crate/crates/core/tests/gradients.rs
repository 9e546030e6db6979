mod common;

use algoexec::executor::Arch;
use algoexec::trace::Algorithm;
use common::step_gradient_check;

#[test]
fn every_parameter_of_a_step_matches_finite_differences() {
    for arch in [Arch::Ne, Arch::NePlusPlus] {
        for algo in [Algorithm::Dijkstra, Algorithm::BellmanFord, Algorithm::Bfs] {
            let r = step_gradient_check(arch, algo, 7, None);
            assert!(r.passes(1e-4), "{arch} {algo}: {r:?}");
        }
    }
}
