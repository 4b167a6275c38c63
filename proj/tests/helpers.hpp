#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "citecat/io.hpp"
#include "citecat/model.hpp"

namespace testutil {

// Unique scratch directory, removed on destruction.
struct TempDir {
  std::filesystem::path path;

  TempDir() {
    std::random_device rd;
    std::mt19937_64 gen(rd());
    for (int attempt = 0; attempt < 16; ++attempt) {
      auto candidate = std::filesystem::temp_directory_path() /
                       ("citecat_test_" + std::to_string(gen()));
      if (std::filesystem::create_directory(candidate)) {
        path = candidate;
        return;
      }
    }
    throw std::runtime_error("could not create temp dir");
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::filesystem::path file(std::string_view name, std::string_view content) const {
    auto p = path / name;
    citecat::io::write_file(p, content);
    return p;
  }
};

inline std::filesystem::path repo_dir() {
#ifdef CITECAT_REPO_DIR
  return std::filesystem::path(CITECAT_REPO_DIR);
#else
  return std::filesystem::current_path();
#endif
}

// Dataset where the label is a pure function of the vocabulary flag (hand
// feature index 7) while token content and TF-IDF entries are label-free
// noise. Removing the hand-feature slot is the only ablation that can hurt.
struct FlagFixture {
  citecat::model::ModelConfig mc;
  citecat::model::TrainConfig tc;
  std::vector<citecat::model::PurposeItem> train_items;
  std::vector<citecat::model::PurposeItem> val_items;
};

inline FlagFixture make_flag_fixture(uint64_t seed = 17) {
  using namespace citecat;
  FlagFixture f;
  f.mc.h_lstm = 6;
  f.mc.mlp_hidden = 12;
  f.mc.d_static = 2;
  f.mc.d_trainable = 3;
  f.mc.vocab_rows = 6;
  f.mc.n_tfidf = 2;

  f.tc.w_worthiness = 0.0;
  f.tc.w_section = 0.0;
  f.tc.lr = 0.01;
  f.tc.dropout = 0.0;
  f.tc.batch_size = 10;
  f.tc.max_epochs = 30;
  f.tc.patience = 30;
  f.tc.seed = seed;

  nn::Rng rng(seed);
  auto make_item = [&](int flag) {
    model::PurposeItem item;
    item.label = flag ? 2 : 0;  // COMPARES_CONTRASTS vs BACKGROUND
    size_t len = 2 + rng.below(3);
    for (size_t t = 0; t < len; ++t) {
      item.tokens.static_vecs.push_back({0.1, 0.1});  // constant: no signal
      item.tokens.rows.push_back(rng.below(6));       // noise: no signal
    }
    item.hand.assign(model::kNumHandFeaturesIn, 0.0);
    item.hand[7] = flag ? 1.0 : -1.0;
    item.tfidf = {0.0, 0.0};  // starved: no signal
    return item;
  };
  for (int k = 0; k < 30; ++k) {
    f.train_items.push_back(make_item(0));
    f.train_items.push_back(make_item(1));
  }
  for (int k = 0; k < 10; ++k) {
    f.val_items.push_back(make_item(0));
    f.val_items.push_back(make_item(1));
  }
  return f;
}

}  // namespace testutil
