// Small end-to-end run: greedy input-space sampling against random sampling
// on the 1-D sine problem.
#include "dalr/engine.hpp"

#include <iostream>

int main() {
  using namespace dalr;
  for (auto kind : {acquisition::StrategyKind::Random, acquisition::StrategyKind::GSx}) {
    engine::RunConfig c;
    c.problem = "SINE";
    c.strategy.kind = kind;
    c.gamma = 16;
    c.steps = 6;
    c.ensemble_size = 3;
    c.train.epochs = 150;
    c.width_scale = 0.5;
    c.seed = 7;
    const auto rec = engine::run(c);
    std::cout << acquisition::to_string(kind) << ":";
    for (const auto& s : rec.steps) std::cout << ' ' << s.test_mse;
    std::cout << "\n";
  }
}
