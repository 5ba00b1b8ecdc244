#include "collapselab/ngram.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "collapselab/error.hpp"
#include "collapselab/rng.hpp"
#include "collapselab/text.hpp"

namespace collapselab {

void SamplerConfig::validate() const {
  if (!(temperature > 0.0)) throw Error("sampler temperature must be positive");
  if (!(top_p > 0.0 && top_p <= 1.0)) throw Error("sampler top-p must lie in (0, 1]");
  if (max_length == 0) throw Error("sampler max-length must be positive");
  if (!(repetition_penalty >= 1.0)) throw Error("repetition penalty must be >= 1");
}

std::uint32_t ContextView::count(std::int32_t token) const {
  auto it = std::lower_bound(by_id.begin(), by_id.end(), token,
                             [](const auto& e, std::int32_t t) { return e.first < t; });
  return it != by_id.end() && it->first == token ? it->second : 0;
}

std::size_t NGramModel::KeyHash::operator()(const Key& k) const {
  std::uint64_t h = k.length;
  for (std::size_t i = 0; i < k.length; ++i) h = mix64(h ^ static_cast<std::uint32_t>(k.ids[i]));
  return static_cast<std::size_t>(h);
}

NGramModel::Key NGramModel::make_key(std::span<const std::int32_t> context) {
  Key k;
  k.length = static_cast<std::uint8_t>(context.size());
  std::copy(context.begin(), context.end(), k.ids.begin());
  return k;
}

const NGramModel::Table* NGramModel::find(std::span<const std::int32_t> context) const {
  if (context.size() >= static_cast<std::size_t>(kMaxOrder)) return nullptr;
  auto it = tables_.find(make_key(context));
  return it == tables_.end() ? nullptr : &it->second;
}

NGramModel NGramModel::fit(const std::vector<std::vector<std::string>>& sequences, int order, double add_k) {
  if (order < 2 || order > kMaxOrder) throw Error("n-gram order must lie in [2, 5]");
  if (!(add_k > 0.0)) throw Error("add-k constant must be positive");
  if (sequences.empty()) throw Error("cannot fit an n-gram model on an empty corpus");

  std::unordered_map<std::string, std::uint64_t> freq;
  for (const auto& seq : sequences)
    for (const auto& t : seq) ++freq[t];
  std::vector<std::pair<std::string, std::uint64_t>> sorted(freq.begin(), freq.end());
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });

  NGramModel m;
  m.order_ = order;
  m.add_k_ = add_k;
  m.vocab_ = {"</s>", "<unk>"};
  for (auto& [tok, c] : sorted) m.vocab_.push_back(tok);
  for (std::size_t i = 0; i < m.vocab_.size(); ++i) m.index_[m.vocab_[i]] = static_cast<std::int32_t>(i);

  const auto bos = m.begin_id();
  using Gram = std::array<std::int32_t, kMaxOrder>;
  std::vector<std::vector<Gram>> grams(static_cast<std::size_t>(order));
  std::vector<std::int32_t> padded;
  for (const auto& seq : sequences) {
    padded.assign(static_cast<std::size_t>(order - 1), bos);
    for (const auto& t : seq) padded.push_back(m.index_.at(t));
    padded.push_back(kEnd);
    for (std::size_t i = static_cast<std::size_t>(order - 1); i < padded.size(); ++i) {
      for (int o = 1; o <= order; ++o) {
        Gram g{};
        for (int j = 0; j < o; ++j) g[static_cast<std::size_t>(j)] = padded[i - static_cast<std::size_t>(o - 1 - j)];
        grams[static_cast<std::size_t>(o - 1)].push_back(g);
      }
    }
  }
  for (int o = 1; o <= order; ++o) {
    auto& list = grams[static_cast<std::size_t>(o - 1)];
    std::sort(list.begin(), list.end());
    for (std::size_t i = 0; i < list.size();) {
      std::size_t j = i;
      while (j < list.size() && list[j] == list[i]) ++j;
      Key key;
      key.length = static_cast<std::uint8_t>(o - 1);
      std::copy(list[i].begin(), list[i].begin() + (o - 1), key.ids.begin());
      auto& table = m.tables_[key];
      const auto count = static_cast<std::uint32_t>(j - i);
      table.total += count;
      table.by_id.emplace_back(list[i][static_cast<std::size_t>(o - 1)], count);
      i = j;
    }
  }
  m.finalize_tables();
  return m;
}

void NGramModel::finalize_tables() {
  for (auto& [key, table] : tables_) {
    std::sort(table.by_id.begin(), table.by_id.end());
    table.ranked = table.by_id;
    std::sort(table.ranked.begin(), table.ranked.end(), [](const auto& a, const auto& b) {
      return a.second != b.second ? a.second > b.second : a.first < b.first;
    });
  }
}

const std::string& NGramModel::token(std::int32_t id) const {
  static const std::string kBegin = "<s>";
  if (id == begin_id()) return kBegin;
  if (id < 0 || static_cast<std::size_t>(id) >= vocab_.size()) throw Error("token id out of range");
  return vocab_[static_cast<std::size_t>(id)];
}

std::int32_t NGramModel::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnknown : it->second;
}

std::vector<std::int32_t> NGramModel::encode(const std::vector<std::string>& tokens) const {
  std::vector<std::int32_t> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(id(t));
  return out;
}

std::vector<std::int32_t> NGramModel::start_history() const {
  return std::vector<std::int32_t>(static_cast<std::size_t>(order_ - 1), begin_id());
}

std::uint64_t NGramModel::context_count(std::span<const std::int32_t> context) const {
  const Table* t = find(context);
  return t ? t->total : 0;
}

std::uint64_t NGramModel::ngram_count(std::span<const std::int32_t> context, std::int32_t target) const {
  const Table* t = find(context);
  if (!t) return 0;
  ContextView v{t->total, t->ranked, t->by_id, context.size()};
  return v.count(target);
}

ContextView NGramModel::lookup(std::span<const std::int32_t> history) const {
  const std::size_t max_len = std::min(history.size(), static_cast<std::size_t>(order_ - 1));
  for (std::size_t len = max_len + 1; len-- > 0;) {
    const auto ctx = history.subspan(history.size() - len, len);
    if (const Table* t = find(ctx)) return ContextView{t->total, t->ranked, t->by_id, len};
  }
  throw Error("n-gram model has no unigram table");
}

double NGramModel::probability(const ContextView& view, std::int32_t target) const {
  const double v = static_cast<double>(outcome_count());
  return (static_cast<double>(view.count(target)) + add_k_) / (static_cast<double>(view.total) + add_k_ * v);
}

double NGramModel::probability(std::span<const std::int32_t> history, std::int32_t target) const {
  return probability(lookup(history), target);
}

std::string NGramModel::serialize() const {
  std::ostringstream out;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", add_k_);
  out << "collapselab-ngram 1\norder " << order_ << "\nadd_k " << buf << "\nvocab " << vocab_.size() << '\n';
  for (const auto& t : vocab_) out << t << '\n';
  std::vector<const std::pair<const Key, Table>*> entries;
  for (const auto& e : tables_) entries.push_back(&e);
  std::sort(entries.begin(), entries.end(), [](auto* a, auto* b) {
    if (a->first.length != b->first.length) return a->first.length < b->first.length;
    return std::lexicographical_compare(a->first.ids.begin(), a->first.ids.begin() + a->first.length,
                                        b->first.ids.begin(), b->first.ids.begin() + b->first.length);
  });
  out << "contexts " << entries.size() << '\n';
  for (auto* e : entries) {
    out << static_cast<int>(e->first.length);
    for (std::size_t i = 0; i < e->first.length; ++i) out << ' ' << e->first.ids[i];
    out << " |";
    for (const auto& [id, c] : e->second.by_id) out << ' ' << id << ':' << c;
    out << '\n';
  }
  return out.str();
}

NGramModel NGramModel::deserialize(std::string_view data) {
  std::istringstream in{std::string(data)};
  std::string magic, word;
  int version = 0;
  in >> magic >> version;
  if (magic != "collapselab-ngram" || version != 1) throw Error("not a collapselab n-gram snapshot (v1)");
  NGramModel m;
  std::size_t vocab = 0, contexts = 0;
  if (!(in >> word >> m.order_) || word != "order") throw Error("snapshot: missing order");
  std::string kstr;
  if (!(in >> word >> kstr) || word != "add_k") throw Error("snapshot: missing add_k");
  m.add_k_ = std::strtod(kstr.c_str(), nullptr);
  if (!(in >> word >> vocab) || word != "vocab") throw Error("snapshot: missing vocab");
  std::getline(in, word);
  m.vocab_.resize(vocab);
  for (auto& t : m.vocab_) std::getline(in, t);
  for (std::size_t i = 0; i < m.vocab_.size(); ++i) m.index_[m.vocab_[i]] = static_cast<std::int32_t>(i);
  if (!(in >> word >> contexts) || word != "contexts") throw Error("snapshot: missing contexts");
  std::getline(in, word);
  for (std::size_t c = 0; c < contexts; ++c) {
    std::string line;
    if (!std::getline(in, line)) throw Error("snapshot: truncated context table");
    std::istringstream ls(line);
    int len = 0;
    ls >> len;
    Key key;
    key.length = static_cast<std::uint8_t>(len);
    for (int i = 0; i < len; ++i) ls >> key.ids[static_cast<std::size_t>(i)];
    ls >> word;
    Table t;
    while (ls >> word) {
      const auto colon = word.find(':');
      const auto id = static_cast<std::int32_t>(std::stol(word.substr(0, colon)));
      const auto cnt = static_cast<std::uint32_t>(std::stoul(word.substr(colon + 1)));
      t.by_id.emplace_back(id, cnt);
      t.total += cnt;
    }
    m.tables_[key] = std::move(t);
  }
  m.finalize_tables();
  return m;
}

bool NGramModel::operator==(const NGramModel& other) const {
  if (order_ != other.order_ || add_k_ != other.add_k_ || vocab_ != other.vocab_) return false;
  if (tables_.size() != other.tables_.size()) return false;
  for (const auto& [key, table] : tables_) {
    auto it = other.tables_.find(key);
    if (it == other.tables_.end() || it->second.by_id != table.by_id) return false;
  }
  return true;
}

NGramModel fit_ngram(const std::vector<Document>& documents, int order, double add_k) {
  if (documents.empty()) throw Error("cannot fit an n-gram model on an empty corpus");
  std::vector<std::vector<std::string>> seqs;
  seqs.reserve(documents.size());
  for (const auto& d : documents) seqs.push_back(d.tokens());
  return NGramModel::fit(seqs, order, add_k);
}

NGramModel fit_ngram(const Corpus& corpus, int order, double add_k) { return fit_ngram(corpus.documents, order, add_k); }

std::vector<std::pair<std::int32_t, double>> decoding_distribution(const NGramModel& model,
                                                                    std::span<const std::int32_t> history,
                                                                    const std::vector<std::int32_t>& emitted,
                                                                    const SamplerConfig& config, SamplingLog* log) {
  const ContextView view = model.lookup(history);
  const double v = static_cast<double>(model.outcome_count());
  const double denom = static_cast<double>(view.total) + model.add_k() * v;
  const double floor_score = std::log(model.add_k() / denom);
  const bool penalize = config.repetition_penalty > 1.0 && !emitted.empty();

  struct Cand {
    std::int32_t id;
    double score;
  };
  std::vector<Cand> cands;
  const std::size_t outcomes = model.outcome_count();
  const std::size_t sampleable = outcomes - 1;  // the unknown token is never emitted
  std::size_t want = config.top_k == 0 ? sampleable : std::min(sampleable, config.top_k + (penalize ? emitted.size() : 0));

  for (const auto& [id, c] : view.ranked) {
    if (cands.size() >= want) break;
    if (id == NGramModel::kUnknown) continue;
    cands.push_back({id, std::log((static_cast<double>(c) + model.add_k()) / denom)});
  }
  if (cands.size() < want) {
    // Unobserved continuations tie at the smoothing floor; take them in id order.
    std::vector<std::int32_t> present;
    present.reserve(cands.size());
    for (const auto& c : cands) present.push_back(c.id);
    std::sort(present.begin(), present.end());
    for (std::size_t id = 0; id < outcomes && cands.size() < want; ++id) {
      const auto tid = static_cast<std::int32_t>(id);
      if (tid == NGramModel::kUnknown) continue;
      if (view.count(tid) > 0) continue;
      if (std::binary_search(present.begin(), present.end(), tid)) continue;
      cands.push_back({tid, floor_score});
    }
  }
  if (penalize) {
    for (auto& c : cands)
      if (std::find(emitted.begin(), emitted.end(), c.id) != emitted.end())
        c.score = c.score < 0.0 ? c.score * config.repetition_penalty : c.score / config.repetition_penalty;
  }
  std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
    return a.score != b.score ? a.score > b.score : a.id < b.id;
  });

  if (config.temperature <= SamplerConfig::kGreedyTemperature) return {{cands.front().id, 1.0}};

  if (config.top_k != 0 && cands.size() > config.top_k) cands.resize(config.top_k);
  std::vector<std::pair<std::int32_t, double>> dist;
  dist.reserve(cands.size());
  const double top = cands.front().score / config.temperature;
  double z = 0.0;
  for (const auto& c : cands) {
    const double w = std::exp(c.score / config.temperature - top);
    dist.emplace_back(c.id, w);
    z += w;
  }
  double cum = 0.0;
  std::size_t keep = 0;
  for (; keep < dist.size(); ++keep) {
    dist[keep].second /= z;
    cum += dist[keep].second;
    if (cum >= config.top_p - 1e-12) {
      ++keep;
      break;
    }
  }
  if (keep == 0 || keep > dist.size()) {
    // Rounding kept the mass below top-p for every prefix; fall back to argmax.
    if (log) ++log->argmax_fallbacks;
    return {{dist.front().first, 1.0}};
  }
  dist.resize(keep);
  double mass = 0.0;
  for (const auto& d : dist) mass += d.second;
  for (auto& d : dist) d.second /= mass;
  return dist;
}

std::vector<std::string> decode_sequence(const NGramModel& model, const std::vector<std::string>& prime,
                                         const SamplerConfig& config, std::uint64_t seed, SamplingLog* log) {
  config.validate();
  Rng rng(seed);
  auto history = model.start_history();
  for (auto id : model.encode(prime)) history.push_back(id);
  std::vector<std::int32_t> emitted;
  std::vector<std::string> out;
  for (std::size_t step = 0; step < config.max_length; ++step) {
    const auto dist = decoding_distribution(model, history, emitted, config, log);
    std::int32_t next = dist.back().first;
    double u = rng.uniform();
    for (const auto& [id, p] : dist) {
      if (u < p) {
        next = id;
        break;
      }
      u -= p;
    }
    if (log) ++log->tokens;
    if (next == NGramModel::kEnd) return out;
    history.push_back(next);
    if (std::find(emitted.begin(), emitted.end(), next) == emitted.end()) emitted.push_back(next);
    out.push_back(model.token(next));
  }
  if (log) ++log->truncated_at_max_length;
  return out;
}

std::vector<Section> sections_from_tokens(const std::vector<std::string>& tokens) {
  std::vector<std::pair<std::string, std::vector<std::string>>> raw;
  for (const auto& t : tokens) {
    if (text::is_section_marker(t)) {
      raw.emplace_back(text::section_name_from_marker(t), std::vector<std::string>{});
      continue;
    }
    if (raw.empty()) raw.emplace_back("TEXT", std::vector<std::string>{});
    raw.back().second.push_back(t);
  }
  std::vector<Section> out;
  for (auto& [name, toks] : raw) out.emplace_back(name, text::detokenize(toks));
  return out;
}

SampledText sample_text(const NGramModel& model, const SamplerConfig& config, std::size_t n_docs,
                        std::uint64_t seed, int generation) {
  config.validate();
  const auto prov = Provenance::synthetic_from(generation);
  SampledText result;
  result.documents.reserve(n_docs);
  constexpr int kMaxAttempts = 64;
  for (std::size_t i = 0; i < n_docs; ++i) {
    bool done = false;
    for (int attempt = 0; attempt < kMaxAttempts && !done; ++attempt) {
      const auto stream = derive_seed(seed, (static_cast<std::uint64_t>(attempt) << 40) ^ i);
      auto sections = sections_from_tokens(decode_sequence(model, {}, config, stream, &result.log));
      const bool has_text = std::any_of(sections.begin(), sections.end(),
                                        [](const Section& s) { return !text::words(s.second).empty(); });
      if (!has_text) {
        ++result.log.empty_retries;
        continue;
      }
      result.documents.emplace_back("g" + std::to_string(generation) + "-" + std::to_string(i), std::move(sections),
                                    prov);
      done = true;
    }
    if (!done) throw Error("decoder produced only empty documents after repeated attempts");
  }
  return result;
}

double model_perplexity(const NGramModel& model, const std::vector<std::vector<std::string>>& sequences) {
  if (sequences.empty()) throw Error("perplexity needs a non-empty corpus");
  double log_sum = 0.0;
  std::size_t scored = 0;
  for (const auto& seq : sequences) {
    auto history = model.start_history();
    auto ids = model.encode(seq);
    ids.push_back(NGramModel::kEnd);
    for (auto id : ids) {
      log_sum += std::log(model.probability(history, id));
      ++scored;
      history.push_back(id);
    }
  }
  return std::exp(-log_sum / static_cast<double>(scored));
}

double model_perplexity(const NGramModel& model, const std::vector<Document>& documents) {
  std::vector<std::vector<std::string>> seqs;
  seqs.reserve(documents.size());
  for (const auto& d : documents) seqs.push_back(d.tokens());
  return model_perplexity(model, seqs);
}

std::string conditional_generate(const NGramModel& model, const std::vector<Section>& context,
                                 const std::string& target_section, const SamplerConfig& config, std::uint64_t seed,
                                 SamplingLog* log) {
  std::vector<std::string> prime;
  bool any = false;
  for (const auto& [name, body] : context) {
    prime.push_back(text::section_marker(name));
    for (auto& t : text::tokenize(body)) {
      any = any || text::is_word(t);
      prime.push_back(std::move(t));
    }
  }
  if (!any) throw Error("conditional generation needs a non-empty context");
  prime.push_back(text::section_marker(target_section));
  auto out = decode_sequence(model, prime, config, seed, log);
  // A later section marker ends the target section.
  auto marker = std::find_if(out.begin(), out.end(), [](const std::string& t) { return text::is_section_marker(t); });
  out.erase(marker, out.end());
  return text::detokenize(out);
}

std::string conditional_generate(const NGramModel& model, const std::string& context, const SamplerConfig& config,
                                 std::uint64_t seed) {
  return conditional_generate(model, {{"CONTEXT", context}}, "TARGET", config, seed);
}

}  // namespace collapselab
