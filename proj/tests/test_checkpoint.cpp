#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "mjave/checkpoint.hpp"
#include "mjave/synthetic.hpp"

using namespace mjave;
namespace fs = std::filesystem;

namespace {

struct CkptFixture {
  fs::path dir;
  SyntheticDataset ds;
  Vocabulary vocab;
  ModelConfig cfg;
  Checkpoint<double> ckpt;

  CkptFixture() {
    dir = fs::temp_directory_path() / "mjave_ckpt_test";
    fs::create_directories(dir);

    SyntheticConfig scfg;
    scfg.n = 24;
    scfg.seed = 17;
    scfg.num_labels = 4;
    scfg.d_v = 6;
    scfg.k = 4;
    ds = generate_synthetic(scfg);
    vocab = Vocabulary::build(ds.train);

    cfg.hidden = 6;
    cfg.attention_dim = 5;
    cfg.visual_dim = scfg.d_v;
    cfg.regions = scfg.k;
    cfg.num_labels = scfg.num_labels;
    cfg.vocab_size = vocab.size();
    cfg.max_len = ds.manifest.max_len;
    cfg.encoder_layers = 1;
    cfg.ff_hidden = 8;

    ckpt.config = cfg;
    ckpt.labels = ds.manifest.labels;
    ckpt.vocab_tokens = vocab.tokens();
    ckpt.models.emplace_back("model", ModelParams<double>::init(cfg, 21));
  }

  std::string path(const std::string& name) const { return (dir / name).string(); }
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

// Splits a checkpoint file into its header line and binary payload, lets the
// caller rewrite the header JSON, and writes the result back.
template <typename Fn>
std::string tamper_header(const CkptFixture& fx, const std::string& name, Fn fn) {
  const auto bytes = read_file(fx.path("base.ckpt"));
  const auto nl = bytes.find('\n');
  REQUIRE(nl != std::string::npos);
  auto header = nlohmann::ordered_json::parse(bytes.substr(0, nl));
  fn(header);
  const auto out = fx.path(name);
  write_file(out, header.dump() + "\n" + bytes.substr(nl + 1));
  return out;
}

}  // namespace

TEST_CASE("a checkpoint survives a save/load round trip") {
  CkptFixture fx;
  fx.ckpt.ablation.use_kl = false;
  fx.ckpt.config.untie_visual_value = true;
  fx.ckpt.models.clear();
  fx.ckpt.models.emplace_back("model",
                              ModelParams<double>::init(fx.ckpt.config, 21));
  save_checkpoint(fx.ckpt, fx.path("round.ckpt"));
  const auto loaded = load_checkpoint<double>(fx.path("round.ckpt"));

  CHECK(loaded.labels == fx.ckpt.labels);
  CHECK(loaded.vocab_tokens == fx.ckpt.vocab_tokens);
  CHECK(loaded.config.hidden == fx.ckpt.config.hidden);
  CHECK(loaded.config.untie_visual_value == true);
  CHECK(loaded.ablation.use_kl == false);
  CHECK(loaded.ablation.use_visual == true);
  CHECK(loaded.multitask());

  // Values come back as the float32 cast of what went in.
  std::vector<double> expect, got;
  const_cast<ModelParams<double>&>(fx.ckpt.models.front().second)
      .visit([&](const std::string&, Tensor<double>& t) {
        for (double v : t.value()) expect.push_back(double(float(v)));
      });
  const_cast<ModelParams<double>&>(loaded.models.front().second)
      .visit([&](const std::string&, Tensor<double>& t) {
        for (double v : t.value()) got.push_back(v);
      });
  REQUIRE(expect.size() == got.size());
  CHECK(std::memcmp(expect.data(), got.data(), got.size() * sizeof(double)) == 0);
}

TEST_CASE("saving is deterministic and idempotent at 32 bits") {
  CkptFixture fx;
  save_checkpoint(fx.ckpt, fx.path("base.ckpt"));
  save_checkpoint(fx.ckpt, fx.path("again.ckpt"));
  CHECK(read_file(fx.path("base.ckpt")) == read_file(fx.path("again.ckpt")));

  // One round through float32 is a fixed point: re-saving the loaded
  // checkpoint reproduces the file byte for byte.
  const auto loaded = load_checkpoint<double>(fx.path("base.ckpt"));
  save_checkpoint(loaded, fx.path("resaved.ckpt"));
  CHECK(read_file(fx.path("base.ckpt")) == read_file(fx.path("resaved.ckpt")));
}

TEST_CASE("two loads drive the forward pass to identical bits") {
  CkptFixture fx;
  save_checkpoint(fx.ckpt, fx.path("fw.ckpt"));
  const auto a = load_checkpoint<double>(fx.path("fw.ckpt"));
  const auto b = load_checkpoint<double>(fx.path("fw.ckpt"));

  auto prepared = prepare_instances<double>(fx.ds.valid, fx.vocab, fx.cfg);
  prepared.resize(std::min<std::size_t>(prepared.size(), 4));
  for (const auto& inst : prepared) {
    auto& pa = const_cast<ModelParams<double>&>(a.models.front().second);
    auto& pb = const_cast<ModelParams<double>&>(b.models.front().second);
    const auto fa = forward(inst.enc, inst.image, pa, a.ablation);
    const auto fb = forward(inst.enc, inst.image, pb, b.ablation);
    const auto& va = fa.attr_probs.value();
    const auto& vb = fb.attr_probs.value();
    REQUIRE(va.size() == vb.size());
    CHECK(std::memcmp(va.data(), vb.data(), va.size() * sizeof(double)) == 0);
    const auto& ta = fa.tag_probs.value();
    const auto& tb = fb.tag_probs.value();
    CHECK(std::memcmp(ta.data(), tb.data(), ta.size() * sizeof(double)) == 0);
  }
}

TEST_CASE("a dual-model bundle keeps both parameter sets apart") {
  CkptFixture fx;
  fx.ckpt.models.clear();
  fx.ckpt.models.emplace_back("attr_model", ModelParams<double>::init(fx.cfg, 1));
  fx.ckpt.models.emplace_back("value_model", ModelParams<double>::init(fx.cfg, 2));
  save_checkpoint(fx.ckpt, fx.path("dual.ckpt"));
  const auto loaded = load_checkpoint<double>(fx.path("dual.ckpt"));

  CHECK_FALSE(loaded.multitask());
  REQUIRE(loaded.models.size() == 2);
  CHECK(loaded.models[0].first == "attr_model");
  CHECK(loaded.models[1].first == "value_model");
  CHECK(&loaded.attribute_model() == &loaded.models[0].second);
  CHECK(&loaded.value_model() == &loaded.models[1].second);
  // Different init seeds: the two parameter sets genuinely differ.
  CHECK(loaded.models[0].second.heads.attr_from_text.value() !=
        loaded.models[1].second.heads.attr_from_text.value());
  CHECK_THROWS_AS(loaded.model_for("model"), DataError);
}

TEST_CASE("malformed checkpoints are rejected with clear errors") {
  CkptFixture fx;
  save_checkpoint(fx.ckpt, fx.path("base.ckpt"));

  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_checkpoint<double>(fx.path("nope.ckpt")), DataError);
  }
  SUBCASE("empty file") {
    write_file(fx.path("empty.ckpt"), "");
    CHECK_THROWS_AS(load_checkpoint<double>(fx.path("empty.ckpt")), DataError);
  }
  SUBCASE("header is not JSON") {
    write_file(fx.path("garbage.ckpt"), "not a header\n");
    CHECK_THROWS_AS(load_checkpoint<double>(fx.path("garbage.ckpt")), DataError);
  }
  SUBCASE("unknown format tag") {
    const auto p = tamper_header(fx, "format.ckpt", [](auto& h) {
      h["format"] = "mjave-checkpoint-v9";
    });
    CHECK_THROWS_AS(load_checkpoint<double>(p), DataError);
  }
  SUBCASE("missing tensor") {
    const auto p = tamper_header(fx, "short.ckpt", [](auto& h) {
      h["tensors"].erase(h["tensors"].size() - 1);
    });
    try {
      load_checkpoint<double>(p);
      FAIL_CHECK("expected DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("missing tensor") != std::string::npos);
    }
  }
  SUBCASE("extra tensor") {
    const auto p = tamper_header(fx, "extra.ckpt", [](auto& h) {
      nlohmann::ordered_json bogus;
      bogus["name"] = "model/bogus";
      bogus["rows"] = 1;
      bogus["cols"] = 1;
      bogus["offset"] = 0;
      h["tensors"].push_back(bogus);
    });
    try {
      load_checkpoint<double>(p);
      FAIL_CHECK("expected DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("extra tensors") != std::string::npos);
    }
  }
  SUBCASE("shape mismatch") {
    const auto p = tamper_header(fx, "shape.ckpt", [](nlohmann::ordered_json& h) {
      h["tensors"][0]["rows"] = h["tensors"][0]["rows"].get<int>() + 1;
    });
    try {
      load_checkpoint<double>(p);
      FAIL_CHECK("expected DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("unexpected shape") != std::string::npos);
    }
  }
  SUBCASE("payload overrun") {
    const auto p = tamper_header(fx, "overrun.ckpt", [](nlohmann::ordered_json& h) {
      auto& last = h["tensors"][h["tensors"].size() - 1];
      last["offset"] = last["offset"].get<std::size_t>() + (1u << 20);
    });
    try {
      load_checkpoint<double>(p);
      FAIL_CHECK("expected DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("overruns") != std::string::npos);
    }
  }
  SUBCASE("unprefixed tensor name") {
    const auto p = tamper_header(fx, "prefix.ckpt", [](auto& h) {
      h["tensors"][0]["name"] = "noprefix";
    });
    CHECK_THROWS_AS(load_checkpoint<double>(p), DataError);
  }
  SUBCASE("misaligned payload") {
    auto bytes = read_file(fx.path("base.ckpt"));
    bytes.append("xy");  // two stray bytes
    write_file(fx.path("ragged.ckpt"), bytes);
    try {
      load_checkpoint<double>(fx.path("ragged.ckpt"));
      FAIL_CHECK("expected DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("float-aligned") != std::string::npos);
    }
  }
}

TEST_CASE("the config hash tracks the checkpoint identity") {
  CkptFixture fx;
  save_checkpoint(fx.ckpt, fx.path("h1.ckpt"));
  auto other = fx.ckpt;
  other.labels.push_back("ExtraLabel");
  save_checkpoint(other, fx.path("h2.ckpt"));

  auto hash_of = [&](const std::string& p) {
    const auto bytes = read_file(p);
    const auto header =
        nlohmann::ordered_json::parse(bytes.substr(0, bytes.find('\n')));
    return header.at("config_hash").get<std::string>();
  };
  const auto h1 = hash_of(fx.path("h1.ckpt"));
  CHECK(h1.size() == 16);
  CHECK(h1 == hash_of(fx.path("h1.ckpt")));
  CHECK(h1 != hash_of(fx.path("h2.ckpt")));
}

TEST_CASE("checkpoints are checked against the dataset manifest") {
  CkptFixture fx;
  CHECK_NOTHROW(check_compatible(fx.ckpt, fx.ds.manifest));

  auto wrong_labels = fx.ds.manifest;
  wrong_labels.labels.push_back("Rogue");
  CHECK_THROWS_AS(check_compatible(fx.ckpt, wrong_labels), DataError);

  auto wrong_dv = fx.ds.manifest;
  wrong_dv.d_v += 1;
  CHECK_THROWS_AS(check_compatible(fx.ckpt, wrong_dv), DataError);

  auto wrong_k = fx.ds.manifest;
  wrong_k.k += 1;
  CHECK_THROWS_AS(check_compatible(fx.ckpt, wrong_k), DataError);

  auto wrong_len = fx.ds.manifest;
  wrong_len.max_len += 2;
  CHECK_THROWS_AS(check_compatible(fx.ckpt, wrong_len), DataError);
}
