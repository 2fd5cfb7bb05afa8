#pragma once

#include "critgen/corpus.hpp"
#include "critgen/criteria_parser.hpp"
#include "critgen/model.hpp"

namespace fixtures {

inline critgen::ModelConfig small_config(std::size_t d = 16, std::size_t layers = 1) {
  critgen::ModelConfig c;
  c.n_layers = layers;
  c.n_heads = 2;
  c.d_model = d;
  c.d_ff = 2 * d;
  c.context_window = 256;
  c.prompt_dim = 4;
  c.prompt_hidden = 8;
  c.seed = 3;
  return c;
}

inline critgen::Corpus small_corpus(std::size_t n = 20, std::uint64_t seed = 11) {
  critgen::SynthConfig sc;
  sc.n_trials = n;
  sc.seed = seed;
  return critgen::synthesize_corpus(sc);
}

inline critgen::ModelState small_model(const critgen::Corpus& corpus, const critgen::ModelConfig& config) {
  return critgen::init_model(config, critgen::Vocabulary::build(critgen::corpus_texts(corpus)),
                             critgen::AttributeSchema::default_schema().tags());
}

}  // namespace fixtures
