// Plain CD, CD+NAG and the adaptive bracket search on one synthetic system.
#include "momentum_lab.hpp"

#include <cstdio>

using namespace momentum_lab;

int main() {
    const auto synth = synth_problem(256, 3000.0, 0);
    const auto& problem = synth.problem;
    std::printf("n = %ld, kappa_CD = %.1f\n", static_cast<long>(problem.unknowns()), synth.kappa_cd);

    const BlockScheme scheme = BlockScheme::uniform(8);
    for (int m : {1, 4, 16}) {
        RandomStream a(1, m, 0), b(1, m, 1);
        const auto cd = momentum_solve(problem, scheme, MomentumConfig{1.0, 0.0, 0.0, m}, 1e-6, 100000, a);
        const auto nag = momentum_solve(problem, scheme, MomentumConfig::nesterov(practical_beta(m), m), 1e-6, 100000, b);
        std::printf("m = %2d  cd %6ld  cd+nag %6ld  (beta %.4f)\n", m, cd.iterations, nag.iterations, practical_beta(m));
    }

    AdaptiveConfig cfg;
    cfg.minibatch = 32;
    cfg.max_iters = 20000;
    RandomStream rng(2);
    const auto res = adaptive_solve(problem, scheme, cfg, 1e-6, rng);
    std::printf("adaptive m = 32: %ld iterations, bracket closed at %ld, beta %.5f, residual %.2e\n", res.iterations,
                res.close_iteration, res.selected_beta, res.final_residual);
    for (const auto& e : res.trace)
        if (e.action != BracketAction::none)
            std::printf("  t = %5ld  R = %.3f  %s -> [%.5f, %.5f]\n", e.iteration, e.ratio, to_string(e.action), e.beta_minus, e.beta_plus);
}
