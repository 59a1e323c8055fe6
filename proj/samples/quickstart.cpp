// Train a small LEX model with Gaussian multiple imputation on S3 and report
// selection quality against the known relevant features.
#include <cstdio>

#include "lex/lex.hpp"

int main() {
  using namespace lex;

  auto rep = synth::gen_replicate(synth::Name::S3, 2000, 1000, /*seed=*/0);

  RunConfig rc = config::preset_config("lex-gaussian");
  rc.lex.k = 5;  // select 5 of 11 features per instance
  rc.lex.predictor.hidden_dims = {64, 64};
  rc.lex.selector.hidden_dims = {64, 64};
  rc.train.epochs = 40;

  auto imp = impute::Imputer::fit(rc.lex.imputer, rep.train);
  train::TrainOptions opt;
  opt.on_epoch = [](std::size_t e, const train::RunRecord& r) {
    if ((e + 1) % 10 == 0) std::printf("epoch %3zu  bound %.4f\n", e + 1, r.bound.back());
  };
  auto out = train::train<float>(rc, rep.train, imp, opt);

  Rng rng = make_stream(0, "eval");
  auto m = eval::evaluate_model(out.model, imp, rep.test, 100, rng);
  std::printf("tpr %.3f  fdr %.3f  accuracy %.3f\n", m.tpr, m.fdr, m.accuracy);

  // Which features does the selector pick for the first test instance?
  auto x = std::vector<double>(rep.test.row(0), rep.test.row(0) + rep.test.dim);
  auto logits = model::selector_logits(out.model.cfg, out.model.gamma,
                                       model::rows_tensor<float>(x.data(), 1, x.size()));
  std::printf("selector logits:");
  for (std::size_t d = 0; d < x.size(); ++d) std::printf(" %.1f", logits(0, d));
  std::printf("\n");
}
