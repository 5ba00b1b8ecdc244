#include "collapselab/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>
#include <unordered_map>

#include <json.hpp>

#include "collapselab/error.hpp"
#include "collapselab/imagemetrics.hpp"
#include "collapselab/lexicon.hpp"
#include "collapselab/rng.hpp"
#include "collapselab/safety.hpp"
#include "collapselab/stats.hpp"
#include "collapselab/textmetrics.hpp"

namespace collapselab {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string fnv1a_hex(std::string_view payload) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : payload) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------- config

void check_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!obj.is_object()) throw Error(where + ": expected an object");
  for (const auto& [key, value] : obj.items()) {
    const bool known = std::any_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; });
    if (!known) throw Error(where + ": unknown key '" + key + "'");
  }
}

template <class T>
T get(const json& obj, const char* key, T fallback, const std::string& where) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw Error(where + ": key '" + key + "' has the wrong type");
  }
}

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

SamplerConfig parse_sampler(const json& j, SamplerConfig s, const std::string& where) {
  check_keys(j, {"temperature", "top_k", "top_p", "max_length", "repetition_penalty"}, where);
  s.temperature = get(j, "temperature", s.temperature, where);
  s.top_k = get(j, "top_k", s.top_k, where);
  s.top_p = get(j, "top_p", s.top_p, where);
  s.max_length = get(j, "max_length", s.max_length, where);
  s.repetition_penalty = get(j, "repetition_penalty", s.repetition_penalty, where);
  s.validate();
  return s;
}

struct ParsedCondition {
  ConditionConfig config;
  bool explicit_seeds = false;
  std::size_t replicates = 1;
};

std::vector<std::uint64_t> replicate_seeds(std::uint64_t master, std::size_t replicates) {
  std::vector<std::uint64_t> seeds;
  for (std::size_t r = 0; r < replicates; ++r) seeds.push_back(master + r);
  return seeds;
}

ParsedCondition parse_condition(const json& j, std::uint64_t master, const fs::path& base) {
  const std::string name = get<std::string>(j, "name", "", "condition");
  const std::string where = "condition '" + name + "'";
  if (name.empty()) throw Error("condition without a name");
  if (name.find_first_of("/\\ ") != std::string::npos || name == "." || name == "..")
    throw Error(where + ": names may not contain spaces or path separators");
  check_keys(j,
             {"name", "kernel", "seeds", "replicates", "generations", "size", "sizes", "volume", "real_fraction",
              "filter", "text", "population", "source", "metrics", "bootstrap", "safety_cases"},
             where);
  ParsedCondition pc;
  auto& c = pc.config;
  c.name = name;
  auto& chain = c.chain;
  chain.kernel = parse_kernel_kind(get<std::string>(j, "kernel", "text", where));
  chain.generations = get(j, "generations", 4, where);

  const int size_keys = int(j.contains("size")) + int(j.contains("sizes")) + int(j.contains("volume"));
  if (size_keys > 1) throw Error(where + ": give only one of size, sizes, volume");
  if (j.contains("size")) chain.sizes = {get<std::size_t>(j, "size", 0, where)};
  if (j.contains("sizes")) chain.sizes = get<std::vector<std::size_t>>(j, "sizes", {}, where);
  if (j.contains("volume")) {
    const auto& v = j.at("volume");
    check_keys(v, {"base", "multipliers"}, where + ".volume");
    VolumeSchedule vs;
    vs.base = get(v, "base", vs.base, where);
    vs.multipliers = get(v, "multipliers", vs.multipliers, where);
    vs.validate();
    chain.sizes = {vs.base};
    for (int t = 1; t <= chain.generations; ++t) chain.sizes.push_back(volume_for_generation(vs, t));
  }
  if (size_keys == 0) chain.sizes = {chain.kernel == KernelKind::Text ? std::size_t{4000} : std::size_t{5000}};

  if (j.contains("real_fraction")) {
    if (j.at("real_fraction").is_array())
      chain.real_fraction = get<std::vector<double>>(j, "real_fraction", {}, where);
    else
      chain.real_fraction = {get(j, "real_fraction", 0.0, where)};
  }

  if (j.contains("filter")) {
    const auto& f = j.at("filter");
    if (chain.kernel == KernelKind::Text) {
      check_keys(f, {"k", "synthetic_keep", "real_keep", "dimension", "max_n", "external_vectors"}, where + ".filter");
      TextFilterConfig tf;
      tf.k = get(f, "k", tf.k, where);
      tf.synthetic_keep = get(f, "synthetic_keep", tf.synthetic_keep, where);
      tf.real_keep = get(f, "real_keep", tf.real_keep, where);
      tf.dimension = get(f, "dimension", tf.dimension, where);
      tf.max_n = get(f, "max_n", tf.max_n, where);
      if (f.contains("external_vectors"))
        tf.external_vectors = resolve(base, get<std::string>(f, "external_vectors", "", where));
      chain.text_filter = tf;
    } else {
      check_keys(f, {"exclude"}, where + ".filter");
      ImageFilterConfig imf;
      imf.exclude = get(f, "exclude", imf.exclude, where);
      chain.image_filter = imf;
    }
  }

  if (j.contains("text")) {
    const auto& t = j.at("text");
    check_keys(t, {"order", "add_k", "sampler"}, where + ".text");
    chain.text.order = get(t, "order", chain.text.order, where);
    chain.text.add_k = get(t, "add_k", chain.text.add_k, where);
    if (t.contains("sampler")) chain.text.sampler = parse_sampler(t.at("sampler"), chain.text.sampler, where + ".sampler");
  }
  if (j.contains("population")) {
    const auto& p = j.at("population");
    check_keys(p, {"components", "tolerance", "max_iterations", "temperature"}, where + ".population");
    chain.population.em.components = get(p, "components", chain.population.em.components, where);
    chain.population.em.tolerance = get(p, "tolerance", chain.population.em.tolerance, where);
    chain.population.em.max_iterations = get(p, "max_iterations", chain.population.em.max_iterations, where);
    chain.population.sampler.temperature = get(p, "temperature", chain.population.sampler.temperature, where);
  }

  if (j.contains("source")) {
    const auto& s = j.at("source");
    if (chain.kernel == KernelKind::Text) {
      check_keys(s, {"corpus", "format", "split", "split_seed", "toy"}, where + ".source");
      if (s.contains("corpus")) {
        c.text_source.corpus = resolve(base, get<std::string>(s, "corpus", "", where));
        if (!fs::exists(c.text_source.corpus)) throw Error(where + ": corpus file not found: " + c.text_source.corpus.string());
      }
      c.text_source.format = parse_corpus_format(get<std::string>(s, "format", "jsonl", where));
      if (s.contains("split")) {
        const auto v = get<std::vector<double>>(s, "split", {}, where);
        if (v.size() != 3) throw Error(where + ": split needs three fractions");
        c.text_source.split = {v[0], v[1], v[2]};
      }
      c.text_source.split_seed = get(s, "split_seed", c.text_source.split_seed, where);
      if (s.contains("toy")) {
        const auto& t = s.at("toy");
        check_keys(t, {"documents", "vocabulary", "zipf", "seed"}, where + ".source.toy");
        auto& toy = c.text_source.toy;
        toy.document_count = get(t, "documents", toy.document_count, where);
        toy.vocabulary_size = get(t, "vocabulary", toy.vocabulary_size, where);
        toy.zipf_exponent = get(t, "zipf", toy.zipf_exponent, where);
        toy.seed = get(t, "seed", toy.seed, where);
        toy.validate();
      }
    } else {
      check_keys(s, {"file", "toy"}, where + ".source");
      if (s.contains("file")) {
        c.population_source.file = resolve(base, get<std::string>(s, "file", "", where));
        if (!fs::exists(c.population_source.file))
          throw Error(where + ": population file not found: " + c.population_source.file.string());
      }
      if (s.contains("toy")) {
        const auto& t = s.at("toy");
        check_keys(t, {"records", "dimension", "seed"}, where + ".source.toy");
        auto& toy = c.population_source.toy;
        toy.records = get(t, "records", toy.records, where);
        toy.dimension = get(t, "dimension", toy.dimension, where);
        toy.seed = get(t, "seed", toy.seed, where);
      }
    }
  }

  if (j.contains("metrics")) {
    const auto& catalog =
        chain.kernel == KernelKind::Text ? text_metric_catalog() : population_metric_catalog();
    for (const auto& m : get<std::vector<std::string>>(j, "metrics", {}, where)) {
      const bool dynamic = m.rfind("prevalence_", 0) == 0 || m.rfind("probability_", 0) == 0;
      if (!catalog.contains(m) && !(chain.kernel == KernelKind::Population && dynamic))
        throw Error(where + ": unknown metric '" + m + "'");
      c.metrics.insert(m);
    }
  }
  if (j.contains("bootstrap")) {
    const auto& b = j.at("bootstrap");
    check_keys(b, {"preset", "n", "iterations"}, where + ".bootstrap");
    if (b.contains("preset")) {
      const auto preset = bootstrap_preset(get<std::string>(b, "preset", "", where));
      c.bootstrap_n = preset.n_per_condition;
      c.bootstrap_iterations = preset.iterations;
    }
    c.bootstrap_n = get(b, "n", c.bootstrap_n, where);
    c.bootstrap_iterations = get(b, "iterations", c.bootstrap_iterations, where);
    if (c.bootstrap_iterations < 2) throw Error(where + ": bootstrap needs at least two iterations");
  }
  c.safety_cases = get(j, "safety_cases", c.safety_cases, where);
  c.block_hash = fnv1a_hex(j.dump());

  if (j.contains("seeds") && j.contains("replicates")) throw Error(where + ": give seeds or replicates, not both");
  if (j.contains("seeds")) {
    c.seeds = get<std::vector<std::uint64_t>>(j, "seeds", {}, where);
    if (c.seeds.empty()) throw Error(where + ": seeds list is empty");
    pc.explicit_seeds = true;
  } else {
    pc.replicates = get<std::size_t>(j, "replicates", 1, where);
    if (pc.replicates == 0) throw Error(where + ": replicates must be positive");
    c.seeds = replicate_seeds(master, pc.replicates);
  }
  try {
    chain.validate();
  } catch (const Error& e) {
    throw Error(where + ": " + e.what());
  }
  return pc;
}

}  // namespace

ExperimentConfig parse_experiment_config(std::string_view json_text, const fs::path& base_dir) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw Error(std::string("config is not valid JSON: ") + e.what());
  }
  check_keys(root, {"version", "seed", "output", "conditions"}, "config");
  if (!root.contains("version")) throw Error("config: missing 'version'");
  if (get(root, "version", 0, "config") != kConfigVersion)
    throw Error("config: unsupported version (expected " + std::to_string(kConfigVersion) + ")");
  ExperimentConfig cfg;
  cfg.seed = get<std::uint64_t>(root, "seed", 0, "config");
  if (root.contains("output")) cfg.output = resolve(base_dir, get<std::string>(root, "output", "", "config"));
  if (!root.contains("conditions") || !root.at("conditions").is_array() || root.at("conditions").empty())
    throw Error("config: 'conditions' must be a non-empty list");
  std::set<std::string> names;
  for (const auto& c : root.at("conditions")) {
    auto pc = parse_condition(c, cfg.seed, base_dir);
    if (!names.insert(pc.config.name).second) throw Error("config: duplicate condition name '" + pc.config.name + "'");
    cfg.conditions.push_back(std::move(pc.config));
  }
  cfg.canonical = root.dump();
  return cfg;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_experiment_config(ss.str(), path.parent_path());
}

ExperimentConfig with_master_seed(ExperimentConfig config, std::uint64_t seed) {
  json root = json::parse(config.canonical);
  const auto& conds = root.at("conditions");
  for (std::size_t i = 0; i < config.conditions.size(); ++i) {
    const auto& cj = conds.at(i);
    if (cj.contains("seeds")) continue;
    const std::size_t replicates = cj.contains("replicates") ? cj.at("replicates").get<std::size_t>() : 1;
    config.conditions[i].seeds = replicate_seeds(seed, replicates);
  }
  root["seed"] = seed;
  config.seed = seed;
  config.canonical = root.dump();
  return config;
}

std::string config_hash(const ExperimentConfig& config) {
  return fnv1a_hex(config.canonical + "|tool=" + kToolVersion);
}

const std::map<std::string, MetricOrigin>& text_metric_catalog() {
  static const std::map<std::string, MetricOrigin> m = {
      {"training_real", {"recursion", "compose_training_set", "training set"}},
      {"training_synthetic", {"recursion", "compose_training_set", "training set"}},
      {"training_vocabulary", {"textmetrics", "lexical_profile", "training set"}},
      {"output_vocabulary", {"textmetrics", "lexical_profile", "synthetic output"}},
      {"vocabulary_retention", {"textmetrics", "lexical_profile", "synthetic output / generation-0 training set"}},
      {"ttr", {"textmetrics", "lexical_profile", "synthetic output"}},
      {"repetition_1", {"textmetrics", "lexical_profile", "synthetic output"}},
      {"repetition_2", {"textmetrics", "lexical_profile", "synthetic output"}},
      {"repetition_3", {"textmetrics", "lexical_profile", "synthetic output"}},
      {"uniqueness", {"textmetrics", "lexical_profile", "synthetic output"}},
      {"mean_length", {"textmetrics", "lexical_profile", "synthetic output"}},
      {"opening_trigram_share", {"textmetrics", "lexical_profile", "synthetic output"}},
      {"medical_term_density", {"textmetrics", "medical_term_metrics", "synthetic output"}},
      {"unique_medical_terms", {"textmetrics", "medical_term_metrics", "synthetic output"}},
      {"perplexity_real", {"genkernel", "model_perplexity", "held-out real test split"}},
      {"perplexity_self", {"genkernel", "model_perplexity", "synthetic output"}},
      {"confidence_gap", {"genkernel", "model_perplexity", "perplexity_real / perplexity_self"}},
      {"rare_tail_survival", {"textmetrics", "lexical_profile", "synthetic output vs generation-0 training set"}},
      {"coherence", {"textmetrics", "coherence_score", "synthetic output"}},
      {"clinical_rate", {"textmetrics", "content_ratio", "synthetic output"}},
      {"template_rate", {"textmetrics", "content_ratio", "synthetic output"}},
      {"flesch", {"textmetrics", "readability", "synthetic output"}},
      {"sensitivity", {"safety", "sensitivity_and_false_reassurance", "conditional impressions on test split"}},
      {"false_reassurance", {"safety", "sensitivity_and_false_reassurance", "conditional impressions on test split"}},
      {"hallucination", {"safety", "hallucination_rate", "conditional impressions on test split"}},
      {"utility", {"safety", "report_utility", "conditional impressions vs reference impressions"}},
      {"safety_score", {"safety", "safety_score", "sensitivity, hallucination, utility"}},
      {"bleu_4", {"textmetrics", "overlap_scores", "conditional impressions vs reference impressions"}},
      {"rouge_l", {"textmetrics", "overlap_scores", "conditional impressions vs reference impressions"}},
  };
  return m;
}

const std::map<std::string, MetricOrigin>& population_metric_catalog() {
  static const std::map<std::string, MetricOrigin> m = {
      {"training_real", {"recursion", "compose_training_set", "training set"}},
      {"training_synthetic", {"recursion", "compose_training_set", "training set"}},
      {"frechet_distance", {"imagemetrics", "bootstrap_frechet", "real pool vs synthetic output"}},
      {"frechet_sd", {"imagemetrics", "bootstrap_frechet", "real pool vs synthetic output"}},
      {"male_fraction", {"imagemetrics", "demographic_drift", "synthetic output"}},
      {"mean_age", {"imagemetrics", "demographic_summary", "synthetic output"}},
      {"age_wasserstein", {"stats", "wasserstein1", "real pool vs synthetic output ages"}},
      {"gender_chi_square", {"stats", "chi_square_gof", "synthetic output sex counts vs real share"}},
      {"gender_p_value", {"stats", "chi_square_gof", "synthetic output sex counts vs real share"}},
      {"em_iterations", {"genkernel", "fit_population_model", "training set"}},
      {"prevalence_<label>", {"imagemetrics", "probe_prevalence", "synthetic output (probe trained on real pool)"}},
      {"probability_<label>", {"imagemetrics", "probe_prevalence", "synthetic output (probe trained on real pool)"}},
  };
  return m;
}

namespace {

using namespace textmetrics;

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

void write_file(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << content;
}

std::string composition_json(int t, const Composition& c) {
  json j = {{"generation", t},
            {"real", c.real},
            {"synthetic", c.synthetic},
            {"total", c.total()},
            {"real_pool", c.real_pool},
            {"real_survivors", c.real_survivors},
            {"synthetic_pool", c.synthetic_pool},
            {"synthetic_survivors", c.synthetic_survivors},
            {"reset", "from-scratch refit"}};
  return j.dump(2) + "\n";
}

std::string metrics_csv(const std::map<std::string, MetricValue>& m) {
  std::string out = "metric,value,ci_low,ci_high\n";
  for (const auto& [name, v] : m)
    out += name + "," + num(v.value) + "," + (v.ci_low ? num(*v.ci_low) : "") + "," +
           (v.ci_high ? num(*v.ci_high) : "") + "\n";
  return out;
}

std::map<std::string, MetricValue> select(std::map<std::string, MetricValue> all, const std::set<std::string>& wanted) {
  if (wanted.empty()) return all;
  std::map<std::string, MetricValue> out;
  for (auto& [k, v] : all)
    if (wanted.contains(k)) out[k] = v;
  return out;
}

std::set<std::string> vocabulary(const std::vector<Document>& docs) {
  std::set<std::string> v;
  for (const auto& d : docs) v.insert(d.words().begin(), d.words().end());
  return v;
}

bool wants_any(const std::set<std::string>& wanted, std::initializer_list<const char*> names) {
  if (wanted.empty()) return true;
  return std::any_of(names.begin(), names.end(), [&](const char* n) { return wanted.contains(n); });
}

struct TextReferences {
  std::size_t g0_vocabulary = 0;
  std::unordered_map<std::string, std::size_t> rare;  // G0 words seen at most twice
  std::size_t rare_total = 0;
};

// Metrics for one text generation.
std::map<std::string, MetricValue> text_metrics(const TextSnapshot& s, const ConditionConfig& cond,
                                                const std::vector<Document>& test, TextReferences& ref,
                                                const Lexicon& lexicon, const FindingDetector& detector,
                                                const SafetyPatterns& patterns, std::uint64_t seed) {
  std::map<std::string, MetricValue> m;
  if (s.generation == 0) {
    std::unordered_map<std::string, std::size_t> counts;
    for (const auto& d : s.training)
      for (const auto& w : d.words()) ++counts[w];
    ref.g0_vocabulary = counts.size();
    for (const auto& [w, c] : counts)
      if (c <= 2) {
        ref.rare[w] = c;
        ref.rare_total += c;
      }
  }
  m["training_real"] = {static_cast<double>(s.composition.real)};
  m["training_synthetic"] = {static_cast<double>(s.composition.synthetic)};
  m["training_vocabulary"] = {static_cast<double>(vocabulary(s.training).size())};
  const auto out_vocab = vocabulary(s.synthetic).size();
  m["output_vocabulary"] = {static_cast<double>(out_vocab)};
  m["vocabulary_retention"] = {static_cast<double>(out_vocab) / static_cast<double>(ref.g0_vocabulary)};

  const auto lex = lexical_profile(s.synthetic, lexicon.stopwords);
  m["ttr"] = {lex.ttr};
  m["repetition_1"] = {lex.repetition_rate[0]};
  m["repetition_2"] = {lex.repetition_rate[1]};
  m["repetition_3"] = {lex.repetition_rate[2]};
  m["uniqueness"] = {lex.uniqueness};
  m["mean_length"] = {lex.mean_length, lex.mean_length - lex.sd_length, lex.mean_length + lex.sd_length};
  m["opening_trigram_share"] = {lex.top_opening_trigram_share};

  const auto med = medical_term_metrics(s.synthetic, lexicon);
  m["medical_term_density"] = {med.density};
  m["unique_medical_terms"] = {static_cast<double>(med.unique_terms)};

  const double ppl_real = model_perplexity(*s.model, test);
  const double ppl_self = model_perplexity(*s.model, s.synthetic);
  m["perplexity_real"] = {ppl_real};
  m["perplexity_self"] = {ppl_self};
  m["confidence_gap"] = {ppl_real / ppl_self};

  std::size_t survived = 0;
  for (const auto& d : s.synthetic)
    for (const auto& w : d.words())
      if (ref.rare.contains(w)) ++survived;
  m["rare_tail_survival"] = {ref.rare_total ? static_cast<double>(survived) / static_cast<double>(ref.rare_total) : 0.0};

  if (wants_any(cond.metrics, {"coherence"})) m["coherence"] = {coherence_score(s.synthetic).score};
  const auto content = content_ratio(s.synthetic, lexicon);
  m["clinical_rate"] = {content.clinical_per_1000};
  m["template_rate"] = {content.template_per_1000};
  if (wants_any(cond.metrics, {"flesch"})) {
    double total = 0.0;
    std::size_t scored = 0;
    for (const auto& d : s.synthetic) {
      const auto r = readability(d.full_text());
      if (r.words == 0) continue;
      total += r.flesch;
      ++scored;
    }
    m["flesch"] = {scored ? total / static_cast<double>(scored) : 0.0};
  }

  if (wants_any(cond.metrics, {"sensitivity", "false_reassurance", "hallucination", "utility", "safety_score", "bleu_4",
                               "rouge_l"})) {
    std::vector<std::string> reports, references;
    std::vector<std::set<std::string>> labels;
    for (const auto& d : test) {
      if (reports.size() >= cond.safety_cases) break;
      const auto* findings = d.section("FINDINGS");
      const auto* impression = d.section("IMPRESSION");
      if (!findings || !impression) continue;
      const auto i = reports.size();
      reports.push_back(conditional_generate(*s.model, {{"FINDINGS", *findings}}, "IMPRESSION",
                                             SamplerConfig::conditional(), derive_seed(seed, 0xC0DE + i)));
      references.push_back(*impression);
      labels.push_back(d.labels());
    }
    if (!reports.empty()) {
      const auto sens = sensitivity_and_false_reassurance(reports, labels, detector, patterns.reassurance);
      const double hall = hallucination_rate(reports, labels, detector);
      const auto util = report_utility(reports, references, detector, patterns);
      m["sensitivity"] = {sens.sensitivity};
      m["false_reassurance"] = {sens.false_reassurance};
      m["hallucination"] = {hall};
      m["utility"] = {util.utility};
      m["safety_score"] = {safety_score({sens.sensitivity, hall, util.utility})};
      const auto overlap = overlap_scores(reports, references);
      m["bleu_4"] = {overlap.bleu[3]};
      m["rouge_l"] = {overlap.rouge_l};
    }
  }
  return select(std::move(m), cond.metrics);
}

std::vector<Document> load_text_pool(const TextSource& src, std::vector<Document>& test) {
  Corpus corpus = src.corpus.empty() ? synthesize_toy_corpus(src.toy) : ingest_documents(src.corpus, src.format);
  auto split = split_corpus(corpus, src.split, src.split_seed);
  test = std::move(split.test.documents);
  return std::move(split.train.documents);
}

ConditionResult run_text_condition(const ConditionConfig& cond, const fs::path& dir) {
  ConditionResult result;
  result.name = cond.name;
  std::vector<Document> test;
  const auto train = load_text_pool(cond.text_source, test);
  const auto lexicon = default_lexicon();
  const auto detector = FindingDetector::standard();
  const auto patterns = SafetyPatterns::standard();
  for (auto seed : cond.seeds) {
    ChainConfig chain = cond.chain;
    chain.seed = seed;
    TextReferences ref;
    const fs::path seed_dir = dir.empty() ? fs::path{} : dir / ("seed-" + std::to_string(seed));
    auto chain_result = run_chain(train, chain, [&](TextSnapshot& s) {
      GenerationMetrics row;
      row.seed = seed;
      row.generation = s.generation;
      row.metrics = text_metrics(s, cond, test, ref, lexicon, detector, patterns,
                                 derive_seed(generation_seed(seed, s.generation), 0x5afe));
      if (!seed_dir.empty()) {
        const auto g = seed_dir / ("gen-" + std::to_string(s.generation));
        write_file(g / "model.txt", s.model->serialize());
        write_file(g / "synthetic.jsonl", format_line_records(s.synthetic));
        write_file(g / "composition.json", composition_json(s.generation, s.composition));
        if (!s.composition.decisions.empty())
          write_file(g / "decisions.csv", format_decision_log(s.composition.decisions, cond.block_hash));
        write_file(g / "metrics.csv", metrics_csv(row.metrics));
        result.artifacts.push_back(g);
      }
      result.rows.push_back(std::move(row));
      // The engine keeps its own copy of the output for the next generation.
      s.training.clear();
      s.synthetic.clear();
    });
    if (chain_result.error) {
      result.error = "seed " + std::to_string(seed) + ": " + *chain_result.error;
      break;
    }
  }
  return result;
}

std::map<std::string, MetricValue> population_metrics(const PopulationSnapshot& s, const ConditionConfig& cond,
                                                      const Eigen::MatrixXd& real_rows,
                                                      const DemographicSummary& baseline,
                                                      const ProbeClassifier& probe, std::uint64_t seed) {
  std::map<std::string, MetricValue> m;
  m["training_real"] = {static_cast<double>(s.composition.real)};
  m["training_synthetic"] = {static_cast<double>(s.composition.synthetic)};
  const Eigen::MatrixXd rows = feature_matrix(s.synthetic);
  const std::size_t n = std::min({cond.bootstrap_n, static_cast<std::size_t>(rows.rows()),
                                  static_cast<std::size_t>(real_rows.rows())});
  const auto fd = bootstrap_frechet(real_rows, rows, n, cond.bootstrap_iterations, seed);
  m["frechet_distance"] = {fd.mean, fd.mean - fd.sd, fd.mean + fd.sd};
  m["frechet_sd"] = {fd.sd};
  const auto summary = demographic_summary(s.synthetic);
  const auto drift = demographic_drift(baseline, summary);
  m["male_fraction"] = {drift.male_fraction};
  m["mean_age"] = {stats::mean(summary.ages)};
  m["age_wasserstein"] = {drift.age_wasserstein};
  m["gender_chi_square"] = {drift.gender_chi_square};
  m["gender_p_value"] = {drift.gender_p_value};
  m["em_iterations"] = {static_cast<double>(s.em_iterations)};
  for (const auto& [label, e] : probe_prevalence(probe, rows)) {
    m["prevalence_" + label] = {static_cast<double>(e.positives)};
    m["probability_" + label] = {e.mean_probability};
  }
  return select(std::move(m), cond.metrics);
}

ConditionResult run_population_condition(const ConditionConfig& cond, const fs::path& dir) {
  ConditionResult result;
  result.name = cond.name;
  const Population pool = cond.population_source.file.empty() ? synthesize_toy_population(cond.population_source.toy)
                                                              : load_population(cond.population_source.file);
  std::set<std::string> label_set;
  for (const auto& r : pool) label_set.insert(r.labels.begin(), r.labels.end());
  const std::vector<std::string> label_names(label_set.begin(), label_set.end());
  const Eigen::MatrixXd real_rows = feature_matrix(pool);
  const auto baseline = demographic_summary(pool);
  for (auto seed : cond.seeds) {
    ChainConfig chain = cond.chain;
    chain.seed = seed;
    const auto probe = train_probe(pool, label_names, ProbeOptions{}, derive_seed(seed, 0x9b0b));
    auto chain_result = run_chain(pool, chain);
    for (const auto& s : chain_result.snapshots) {
      GenerationMetrics row;
      row.seed = seed;
      row.generation = s.generation;
      row.metrics = population_metrics(s, cond, real_rows, baseline, probe,
                                       derive_seed(generation_seed(seed, s.generation), 0xfd));
      if (!dir.empty()) {
        const auto g = dir / ("seed-" + std::to_string(seed)) / ("gen-" + std::to_string(s.generation));
        write_file(g / "model.txt", serialize_population_model(*s.model, s.attributes));
        write_file(g / "synthetic.csv", format_population(s.synthetic, label_names));
        write_file(g / "composition.json", composition_json(s.generation, s.composition));
        if (!s.composition.decisions.empty())
          write_file(g / "decisions.csv", format_decision_log(s.composition.decisions, cond.block_hash));
        write_file(g / "metrics.csv", metrics_csv(row.metrics));
        result.artifacts.push_back(g);
      }
      result.rows.push_back(std::move(row));
    }
    if (chain_result.error) {
      result.error = "seed " + std::to_string(seed) + ": " + *chain_result.error;
      break;
    }
  }
  return result;
}

}  // namespace

ConditionResult run_condition(const ConditionConfig& condition, const fs::path& artifact_dir) {
  try {
    return condition.chain.kernel == KernelKind::Text ? run_text_condition(condition, artifact_dir)
                                                      : run_population_condition(condition, artifact_dir);
  } catch (const std::exception& e) {
    ConditionResult r;
    r.name = condition.name;
    r.error = e.what();
    return r;
  }
}

ReportFormat parse_report_format(std::string_view s) {
  if (s == "csv") return ReportFormat::Csv;
  if (s == "jsonl") return ReportFormat::Jsonl;
  throw Error("unknown report format '" + std::string(s) + "' (expected csv or jsonl)");
}

std::string format_report(const ConditionResult& result, ReportFormat format) {
  std::set<std::string> columns;
  for (const auto& r : result.rows)
    for (const auto& [k, v] : r.metrics) columns.insert(k);
  std::ostringstream out;
  if (format == ReportFormat::Csv) {
    out << "condition,seed,generation";
    for (const auto& c : columns) out << ',' << c;
    out << '\n';
    for (const auto& r : result.rows) {
      out << result.name << ',' << r.seed << ',' << r.generation;
      for (const auto& c : columns) {
        out << ',';
        if (auto it = r.metrics.find(c); it != r.metrics.end()) out << num(it->second.value);
      }
      out << '\n';
    }
  } else {
    for (const auto& r : result.rows) {
      // Values go through the same formatter as CSV so both are reproducible.
      std::string line = "{\"condition\":" + json(result.name).dump() + ",\"seed\":" + std::to_string(r.seed) +
                         ",\"generation\":" + std::to_string(r.generation) + ",\"metrics\":{";
      bool first = true;
      for (const auto& [k, v] : r.metrics) {
        line += (first ? "" : ",") + json(k).dump() + ":" + num(v.value);
        first = false;
      }
      out << line << "}}\n";
    }
  }
  return out.str();
}

namespace {

std::string report_name(ReportFormat f) { return f == ReportFormat::Csv ? "report.csv" : "report.jsonl"; }

json manifest_json(const ExperimentConfig& cfg, const RunManifest& m, ReportFormat format, std::size_t workers) {
  json j;
  j["tool"] = "collapselab";
  j["tool_version"] = kToolVersion;
  j["report_version"] = kReportVersion;
  j["config_hash"] = m.config_hash;
  j["config"] = json::parse(cfg.canonical);
  j["master_seed"] = m.master_seed;
  j["complete"] = m.complete;
  j["wall_clock_seconds"] = m.wall_clock_seconds;
  j["workers"] = workers;
  j["report_format"] = format == ReportFormat::Csv ? "csv" : "jsonl";
  j["conditions"] = json::array();
  for (std::size_t i = 0; i < m.conditions.size(); ++i) {
    const auto& c = m.conditions[i];
    const auto& cc = cfg.conditions[i];
    json cj;
    cj["name"] = c.name;
    cj["kernel"] = to_string(cc.chain.kernel);
    cj["seeds"] = cc.seeds;
    cj["complete"] = !c.error.has_value();
    if (c.error) cj["error"] = *c.error;
    cj["report"] = c.name + "/" + report_name(format);
    cj["reset"] = "from-scratch refit every generation";
    if (cc.chain.kernel == KernelKind::Text) {
      const auto& sc = cc.chain.text.sampler;
      cj["sampler"] = {{"temperature", sc.temperature}, {"top_k", sc.top_k}, {"top_p", sc.top_p},
                       {"max_length", sc.max_length}, {"repetition_penalty", sc.repetition_penalty}};
      cj["decoding_order"] = "repetition-penalty, temperature, top-k, top-p, renormalize";
      cj["repetition_definition"] = textmetrics::kRepetitionDefinition;
    }
    cj["generations"] = json::array();
    for (const auto& a : c.artifacts) cj["generations"].push_back(fs::relative(a, m.directory).generic_string());
    const auto& catalog =
        cc.chain.kernel == KernelKind::Text ? text_metric_catalog() : population_metric_catalog();
    json prov;
    for (const auto& [name, o] : catalog)
      prov[name] = {{"module", o.module}, {"operation", o.operation}, {"input", o.input}};
    cj["metric_provenance"] = prov;
    j["conditions"].push_back(cj);
  }
  return j;
}

}  // namespace

RunManifest run_experiment(const ExperimentConfig& config, const RunOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  RunManifest m;
  m.config_hash = config_hash(config);
  m.master_seed = config.seed;
  m.directory = options.out.empty() ? config.output : options.out;
  if (m.directory.empty()) throw Error("no output directory: pass --out or set 'output' in the config");
  std::size_t workers = std::max<std::size_t>(1, options.workers);
  if (const char* det = std::getenv("COLLAPSELAB_DETERMINISTIC"); det && std::string(det) == "1") workers = 1;
  workers = std::min(workers, config.conditions.size());

  fs::create_directories(m.directory);
  m.conditions.resize(config.conditions.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < config.conditions.size(); i = next++) {
      const auto& cond = config.conditions[i];
      const fs::path dir = m.directory / cond.name;
      m.conditions[i] = run_condition(cond, options.write_generation_artifacts ? dir : fs::path{});
      write_file(dir / report_name(options.format), format_report(m.conditions[i], options.format));
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  m.complete = std::all_of(m.conditions.begin(), m.conditions.end(),
                           [](const ConditionResult& c) { return !c.error.has_value(); });
  m.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_file(m.directory / "manifest.json", manifest_json(config, m, options.format, workers).dump(2) + "\n");
  return m;
}

// ---------------------------------------------------------------- reports

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::vector<GenerationMetrics> parse_csv_report(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw Error("empty report");
  const auto header = split_csv(line);
  if (header.size() < 3 || header[0] != "condition") throw Error("report header not recognised");
  std::vector<GenerationMetrics> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    GenerationMetrics r;
    r.seed = std::stoull(cells.at(1));
    r.generation = std::stoi(cells.at(2));
    for (std::size_t c = 3; c < header.size() && c < cells.size(); ++c)
      if (!cells[c].empty()) r.metrics[header[c]] = {std::stod(cells[c])};
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<GenerationMetrics> parse_jsonl_report(std::istream& in) {
  std::vector<GenerationMetrics> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = json::parse(line);
    GenerationMetrics r;
    r.seed = j.at("seed").get<std::uint64_t>();
    r.generation = j.at("generation").get<int>();
    for (const auto& [k, v] : j.at("metrics").items()) r.metrics[k] = {v.get<double>()};
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace

std::map<std::string, std::vector<GenerationMetrics>> load_run_reports(const fs::path& run_dir) {
  std::ifstream in(run_dir / "manifest.json");
  if (!in) throw Error("no manifest.json in " + run_dir.string());
  const json manifest = json::parse(in);
  if (!manifest.value("complete", false)) throw Error("run in " + run_dir.string() + " is incomplete");
  std::map<std::string, std::vector<GenerationMetrics>> out;
  for (const auto& c : manifest.at("conditions")) {
    const auto path = run_dir / c.at("report").get<std::string>();
    std::ifstream rep(path);
    if (!rep) throw Error("missing report " + path.string());
    out[c.at("name").get<std::string>()] =
        path.extension() == ".jsonl" ? parse_jsonl_report(rep) : parse_csv_report(rep);
  }
  return out;
}

std::vector<PlotRow> plot_series(const fs::path& run_dir, const std::string& metric) {
  const auto reports = load_run_reports(run_dir);
  std::vector<PlotRow> rows;
  std::set<std::string> available;
  for (const auto& [condition, report] : reports) {
    std::map<int, std::vector<double>> values, sds;
    for (const auto& r : report) {
      for (const auto& [k, v] : r.metrics) available.insert(k);
      if (auto it = r.metrics.find(metric); it != r.metrics.end()) values[r.generation].push_back(it->second.value);
      if (auto it = r.metrics.find("frechet_sd"); it != r.metrics.end()) sds[r.generation].push_back(it->second.value);
    }
    // Conditions of another kernel (or with a narrower metric list) are skipped.
    for (const auto& [g, v] : values) {
      PlotRow p;
      p.generation = g;
      p.condition = condition;
      p.metric = metric;
      p.value = stats::mean(v);
      p.ci_low = p.ci_high = p.value;
      if (v.size() >= 2) {
        const auto ci = stats::bootstrap_ci(
            v, [](std::span<const double> s) { return stats::mean(s); }, 1000, 0.95, 0x51075);
        p.ci_low = ci.low;
        p.ci_high = ci.high;
      } else if (metric == "frechet_distance" && sds.contains(g)) {
        p.ci_low = p.value - sds[g].front();
        p.ci_high = p.value + sds[g].front();
      }
      rows.push_back(p);
    }
  }
  if (rows.empty()) {
    std::string list;
    for (const auto& a : available) list += (list.empty() ? "" : ", ") + a;
    throw Error("metric '" + metric + "' was not evaluated in this run; available: " + list);
  }
  return rows;
}

std::string format_plot_rows(const std::vector<PlotRow>& rows) {
  std::string out = "generation,condition,metric,value,ci-low,ci-high\n";
  for (const auto& r : rows)
    out += std::to_string(r.generation) + "," + r.condition + "," + r.metric + "," + num(r.value) + "," +
           num(r.ci_low) + "," + num(r.ci_high) + "\n";
  return out;
}

std::vector<std::string> panel_metrics(const std::string& panel) {
  static const std::map<std::string, std::vector<std::string>> panels = {
      {"vocabulary", {"output_vocabulary", "vocabulary_retention"}},
      {"perplexity", {"perplexity_real", "perplexity_self"}},
      {"confidence", {"perplexity_real", "perplexity_self", "confidence_gap"}},
      {"lexical", {"ttr", "repetition_1", "repetition_2", "repetition_3", "uniqueness"}},
      {"medical", {"medical_term_density", "unique_medical_terms"}},
      {"content", {"clinical_rate", "template_rate"}},
      {"safety", {"safety_score", "sensitivity", "hallucination", "utility", "false_reassurance"}},
      {"fid", {"frechet_distance"}},
      {"demographics", {"male_fraction", "age_wasserstein", "gender_p_value"}},
  };
  if (auto it = panels.find(panel); it != panels.end()) return it->second;
  return {panel};
}

std::vector<fs::path> emit_plot_data(const fs::path& run_dir, const std::string& panel, const fs::path& out_dir) {
  std::vector<PlotRow> rows;
  for (const auto& metric : panel_metrics(panel)) {
    auto series = plot_series(run_dir, metric);
    rows.insert(rows.end(), series.begin(), series.end());
  }
  const auto path = out_dir / (panel + ".csv");
  write_file(path, format_plot_rows(rows));
  return {path};
}

}  // namespace collapselab
