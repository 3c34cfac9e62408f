// Mock corpus -> SMOTE and a short DDPM run -> side-by-side metric summary.
// usage: quickstart [rows] [ddpm_steps]

#include <cstdio>
#include <cstdlib>
#include <iostream>

#include "wforge/pipeline.hpp"

using namespace wforge;

int main(int argc, char** argv) {
  const std::size_t rows = argc > 1 ? std::strtoull(argv[1], nullptr, 10) : 20000;
  const std::size_t steps = argc > 2 ? std::strtoull(argv[2], nullptr, 10) : 1000;

  auto all = generate_mock_table(MockProfile::defaults(), rows, 42);
  auto [train, test] = split_train_test(all, 0.8, 42);
  auto enc = TableEncoder::fit(train);
  auto x = enc.encode(train);
  std::printf("train %zu rows, test %zu rows, encoded dim %ld\n", train.rows(), test.rows(),
              static_cast<long>(x.values.cols()));

  auto smote = enc.decode(fit_smote(x).sample(train.rows(), 7));

  TrainConfig tc;
  tc.steps = steps;
  tc.seed = 7;
  detail::Stopwatch clock;
  auto model = train_diffusion(x, DiffusionConfig{}, tc);
  std::printf("ddpm: %zu steps in %.1f s, final loss %.4f\n", model.steps_run, clock.seconds(), model.final_loss);
  auto ddpm = enc.decode(sample_diffusion(model, train.rows(), 7));

  std::cout << "\ncopy\n" << evaluate(train, train, test).summary_row() << "\n";
  std::cout << "\nsmote\n" << evaluate(train, smote, test).summary_row() << "\n";
  std::cout << "\nddpm\n" << evaluate(train, ddpm, test).summary_row() << "\n";
}
