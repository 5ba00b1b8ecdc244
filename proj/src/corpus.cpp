#include "collapselab/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "collapselab/error.hpp"
#include "collapselab/rng.hpp"
#include "collapselab/text.hpp"

namespace collapselab {

std::string to_string(Sex s) { return s == Sex::Male ? "male" : "female"; }

Sex parse_sex(std::string_view s) {
  const auto v = text::to_lower(text::trim(s));
  if (v == "male" || v == "m") return Sex::Male;
  if (v == "female" || v == "f") return Sex::Female;
  throw Error("unknown sex value '" + std::string(s) + "'");
}

Provenance Provenance::synthetic_from(int generation) {
  if (generation < 0) throw Error("synthetic provenance needs a non-negative generation");
  return {true, generation};
}

std::string to_string(const Provenance& p) {
  return p.is_real() ? "real" : "synthetic:" + std::to_string(p.generation);
}

Document::Document(std::string id, std::vector<Section> sections, Provenance provenance,
                   std::set<std::string> labels, std::optional<Demographics> demographics)
    : id_(std::move(id)),
      sections_(std::move(sections)),
      provenance_(provenance),
      labels_(std::move(labels)),
      demographics_(demographics) {
  if (provenance_.generation < 0) throw Error("document " + id_ + ": negative generation index");
  if (demographics_ && (demographics_->age < kMinAge || demographics_->age > kMaxAge))
    throw Error("document " + id_ + ": age " + std::to_string(demographics_->age) + " outside [18, 100]");
  const bool any = std::any_of(sections_.begin(), sections_.end(),
                               [](const Section& s) { return !text::trim(s.second).empty(); });
  if (!any) throw Error("document " + id_ + ": no non-empty section");
  for (const auto& [name, body] : sections_) {
    tokens_.push_back(text::section_marker(name));
    for (auto& t : text::tokenize(body)) {
      if (text::is_word(t)) words_.push_back(t);
      tokens_.push_back(std::move(t));
    }
  }
}

const std::string* Document::section(std::string_view name) const {
  for (const auto& s : sections_)
    if (s.first == name) return &s.second;
  return nullptr;
}

std::string Document::full_text() const {
  std::string out;
  for (const auto& s : sections_) {
    if (!out.empty()) out += "\n\n";
    out += s.second;
  }
  return out;
}

Document Document::with_provenance(Provenance p) const {
  Document d = *this;
  d.provenance_ = p;
  return d;
}

Document Document::with_id(std::string id) const {
  Document d = *this;
  d.id_ = std::move(id);
  return d;
}

CorpusFormat parse_corpus_format(std::string_view s) {
  if (s == "sectioned-text" || s == "txt") return CorpusFormat::SectionedText;
  if (s == "line-record" || s == "jsonl") return CorpusFormat::LineRecord;
  throw Error("unknown corpus format '" + std::string(s) + "'");
}

namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.emplace_back(s.substr(start, pos == std::string_view::npos ? s.size() - start : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::set<std::string> parse_labels(std::string_view s) {
  std::set<std::string> out;
  for (auto& l : split(s, ';'))
    for (auto& part : split(l, ',')) {
      auto v = text::to_lower(text::trim(part));
      if (!v.empty()) out.insert(v);
    }
  return out;
}

// Accepts "real", "synthetic", "synthetic:2", "synthetic,gen=2".
Provenance parse_provenance(std::string_view value, std::optional<int> gen) {
  auto parts = split(value, ',');
  auto kind = text::to_lower(text::trim(parts[0]));
  for (std::size_t i = 1; i < parts.size(); ++i) {
    auto kv = text::trim(parts[i]);
    if (kv.rfind("gen=", 0) == 0) gen = std::stoi(kv.substr(4));
    else throw Error("unrecognised provenance attribute '" + kv + "'");
  }
  if (auto colon = kind.find(':'); colon != std::string::npos) {
    gen = std::stoi(kind.substr(colon + 1));
    kind = kind.substr(0, colon);
  }
  if (kind == "real") return Provenance::real();
  if (kind == "synthetic") {
    if (!gen) throw Error("synthetic provenance without generation index");
    return Provenance::synthetic_from(*gen);
  }
  throw Error("unknown provenance '" + std::string(value) + "'");
}

bool is_section_header(std::string_view line, std::string& name, std::string& rest) {
  const auto colon = line.find(':');
  if (colon == std::string_view::npos || colon == 0) return false;
  const auto head = line.substr(0, colon);
  bool has_letter = false;
  for (char c : head) {
    const auto u = static_cast<unsigned char>(c);
    if (std::isupper(u)) has_letter = true;
    else if (!(std::isdigit(u) || c == ' ' || c == '-' || c == '_')) return false;
  }
  if (!has_letter || !std::isupper(static_cast<unsigned char>(head[0]))) return false;
  name = std::string(head);
  rest = text::trim(line.substr(colon + 1));
  return true;
}

Document build_sectioned_record(const std::vector<std::string>& lines, std::size_t index) {
  std::map<std::string, std::string> header;
  std::vector<Section> sections;
  for (const auto& raw : lines) {
    const std::string line = text::trim(raw);
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw Error("header line without '=': " + line);
      header[text::to_lower(text::trim(line.substr(1, eq - 1)))] = text::trim(line.substr(eq + 1));
      continue;
    }
    std::string name, rest;
    if (is_section_header(line, name, rest)) {
      sections.emplace_back(name, rest);
      continue;
    }
    if (sections.empty()) throw Error("text before first SECTION: header");
    auto& body = sections.back().second;
    if (!body.empty()) body += ' ';
    body += line;
  }
  std::optional<int> gen;
  if (auto it = header.find("gen"); it != header.end()) gen = std::stoi(it->second);
  Provenance prov = Provenance::real();
  if (auto it = header.find("provenance"); it != header.end()) prov = parse_provenance(it->second, gen);
  std::set<std::string> labels;
  if (auto it = header.find("labels"); it != header.end()) labels = parse_labels(it->second);
  std::optional<Demographics> demo;
  auto sex = header.find("sex");
  auto age = header.find("age");
  if (sex != header.end() || age != header.end()) {
    if (sex == header.end() || age == header.end()) throw Error("demographics need both #sex= and #age=");
    demo = Demographics{parse_sex(sex->second), std::stoi(age->second)};
  }
  std::string id = "doc" + std::to_string(index);
  if (auto it = header.find("id"); it != header.end()) id = it->second;
  return Document(std::move(id), std::move(sections), prov, std::move(labels), demo);
}

template <typename F>
auto with_record_index(std::size_t index, F&& f) {
  try {
    return f();
  } catch (const std::exception& e) {
    throw Error("record " + std::to_string(index) + ": " + e.what());
  }
}

}  // namespace

Corpus parse_sectioned_text(std::string_view content) {
  Corpus corpus;
  std::vector<std::string> lines;
  std::size_t index = 0;
  auto flush = [&] {
    if (lines.empty()) return;
    ++index;
    corpus.documents.push_back(with_record_index(index, [&] { return build_sectioned_record(lines, index); }));
    lines.clear();
  };
  for (auto& line : split(content, '\n')) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (text::trim(line).empty()) flush();
    else lines.push_back(line);
  }
  flush();
  if (corpus.empty()) throw Error("empty corpus file");
  return corpus;
}

Corpus parse_line_records(std::string_view content) {
  using nlohmann::json;
  Corpus corpus;
  std::size_t index = 0;
  for (auto& line : split(content, '\n')) {
    if (text::trim(line).empty()) continue;
    ++index;
    corpus.documents.push_back(with_record_index(index, [&] {
      const json rec = json::parse(line);
      if (!rec.is_object()) throw Error("record is not an object");
      std::string id = "doc" + std::to_string(index);
      std::vector<Section> sections;
      std::optional<int> gen;
      std::string prov = "real";
      std::set<std::string> labels;
      std::optional<std::string> sex;
      std::optional<int> age;
      for (const auto& [key, value] : rec.items()) {
        if (value.is_structured()) throw Error("field '" + key + "' is not a scalar");
        if (key == "id") id = value.get<std::string>();
        else if (key == "provenance") prov = value.get<std::string>();
        else if (key == "generation") gen = value.get<int>();
        else if (key == "labels") labels = parse_labels(value.get<std::string>());
        else if (key == "sex") sex = value.get<std::string>();
        else if (key == "age") age = value.get<int>();
        else if (key.rfind("section.", 0) == 0) sections.emplace_back(key.substr(8), value.get<std::string>());
        else throw Error("unknown field '" + key + "'");
      }
      std::optional<Demographics> demo;
      if (sex || age) {
        if (!sex || !age) throw Error("demographics need both sex and age");
        demo = Demographics{parse_sex(*sex), *age};
      }
      return Document(std::move(id), std::move(sections), parse_provenance(prov, gen), std::move(labels), demo);
    }));
  }
  if (corpus.empty()) throw Error("empty corpus file");
  return corpus;
}

Corpus ingest_documents(const std::filesystem::path& path, CorpusFormat format) {
  const auto content = read_file(path);
  return format == CorpusFormat::SectionedText ? parse_sectioned_text(content) : parse_line_records(content);
}

namespace {

std::string join_labels(const std::set<std::string>& labels) {
  std::string out;
  for (const auto& l : labels) {
    if (!out.empty()) out += ';';
    out += l;
  }
  return out;
}

}  // namespace

std::string format_sectioned_text(const std::vector<Document>& docs) {
  std::ostringstream out;
  bool first = true;
  for (const auto& d : docs) {
    if (!first) out << '\n';
    first = false;
    out << "#id=" << d.id() << '\n';
    if (!d.provenance().is_real())
      out << "#provenance=synthetic\n#gen=" << d.provenance().generation << '\n';
    if (!d.labels().empty()) out << "#labels=" << join_labels(d.labels()) << '\n';
    if (d.demographics())
      out << "#sex=" << to_string(d.demographics()->sex) << "\n#age=" << d.demographics()->age << '\n';
    for (const auto& [name, body] : d.sections()) out << name << ": " << body << '\n';
  }
  return out.str();
}

std::string format_line_records(const std::vector<Document>& docs) {
  using nlohmann::ordered_json;
  std::string out;
  for (const auto& d : docs) {
    ordered_json rec;
    rec["id"] = d.id();
    rec["provenance"] = d.provenance().is_real() ? "real" : "synthetic";
    if (!d.provenance().is_real()) rec["generation"] = d.provenance().generation;
    if (!d.labels().empty()) rec["labels"] = join_labels(d.labels());
    if (d.demographics()) {
      rec["sex"] = to_string(d.demographics()->sex);
      rec["age"] = d.demographics()->age;
    }
    for (const auto& [name, body] : d.sections()) rec["section." + name] = body;
    out += rec.dump();
    out += '\n';
  }
  return out;
}

void write_documents(const std::filesystem::path& path, const std::vector<Document>& docs, CorpusFormat format) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << (format == CorpusFormat::SectionedText ? format_sectioned_text(docs) : format_line_records(docs));
}

CorpusSplit split_corpus(const Corpus& corpus, std::array<double, 3> fractions, std::uint64_t seed) {
  const std::size_t n = corpus.size();
  if (n < 3) throw Error("split needs at least 3 documents");
  for (double f : fractions)
    if (!(f > 0.0)) throw Error("split fractions must be positive");
  if (std::abs(fractions[0] + fractions[1] + fractions[2] - 1.0) > 1e-9)
    throw Error("split fractions must sum to 1");

  std::array<std::size_t, 3> target{};
  target[0] = static_cast<std::size_t>(std::llround(fractions[0] * static_cast<double>(n)));
  target[1] = static_cast<std::size_t>(std::llround(fractions[1] * static_cast<double>(n)));
  target[0] = std::min(target[0], n);
  target[1] = std::min(target[1], n - target[0]);
  target[2] = n - target[0] - target[1];

  // Strata keyed by the sorted label set; documents shuffled inside each
  // stratum, strata visited in key order.
  std::map<std::string, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < n; ++i) strata[join_labels(corpus.documents[i].labels())].push_back(i);
  Rng rng(derive_seed(seed, 0x5b117));
  std::vector<std::size_t> order;
  order.reserve(n);
  for (auto& [key, members] : strata) {
    rng.shuffle(members);
    order.insert(order.end(), members.begin(), members.end());
  }

  // Walk the stratified order handing each document to the split with the
  // largest outstanding quota, so every stratum is spread proportionally.
  CorpusSplit out;
  std::array<Corpus*, 3> dest = {&out.train, &out.val, &out.test};
  std::array<std::size_t, 3> assigned{};
  for (std::size_t pos = 0; pos < n; ++pos) {
    int best = -1;
    double best_deficit = -1e300;
    for (int s = 0; s < 3; ++s) {
      if (assigned[s] >= target[s]) continue;
      const double deficit = static_cast<double>(target[s]) * static_cast<double>(pos + 1) / static_cast<double>(n) -
                             static_cast<double>(assigned[s]);
      if (deficit > best_deficit) {
        best_deficit = deficit;
        best = s;
      }
    }
    ++assigned[best];
    dest[best]->documents.push_back(corpus.documents[order[pos]]);
  }
  out.train.split = SplitRole::Train;
  out.val.split = SplitRole::Val;
  out.test.split = SplitRole::Test;
  return out;
}

ConditionMatrix ToyPopulationSpec::default_cooccurrence() {
  // Order follows kConditions.
  ConditionMatrix m{};
  for (std::size_t i = 0; i < 10; ++i)
    for (std::size_t j = 0; j < 10; ++j) m[i][j] = i == j ? 1.0 : 0.05;
  auto set = [&](std::size_t i, std::size_t j, double v) { m[i][j] = v; };
  set(0, 1, 0.88);  // pneumonia -> effusion
  set(0, 5, 0.45);  // pneumonia -> consolidation
  set(0, 3, 0.30);
  set(1, 0, 0.35);
  set(1, 9, 0.40);  // effusion -> cardiomegaly
  set(1, 2, 0.30);
  set(2, 9, 0.55);  // edema -> cardiomegaly
  set(2, 1, 0.50);
  set(3, 1, 0.40);
  set(5, 0, 0.50);
  set(6, 7, 0.30);
  set(7, 6, 0.20);
  set(9, 1, 0.35);
  set(9, 2, 0.30);
  return m;
}

void ToyPopulationSpec::validate() const {
  if (vocabulary_size < 10) throw Error("toy vocabulary-size must be at least 10");
  if (!(zipf_exponent > 0.0)) throw Error("zipf exponent must be positive");
  if (document_count == 0) throw Error("toy document-count must be positive");
  if (sections.empty()) throw Error("toy section schema is empty");
  if (!(male_fraction >= 0.0 && male_fraction <= 1.0)) throw Error("male fraction outside [0,1]");
  if (!(age_sd >= 0.0)) throw Error("age sd must be non-negative");
  for (std::size_t i = 0; i < 10; ++i)
    for (std::size_t j = 0; j < 10; ++j) {
      const double v = cooccurrence[i][j];
      if (!(v >= 0.0 && v <= 1.0)) throw Error("co-occurrence entry outside [0,1]");
      if (i == j && v != 1.0) throw Error("co-occurrence diagonal must be 1");
    }
  if (min_sentences < 1 || max_sentences < min_sentences) throw Error("bad sentence count range");
  if (min_sentence_words < 1 || max_sentence_words < min_sentence_words) throw Error("bad sentence length range");
}

namespace {

// Words the synthesizer itself uses plus common English and clinical words a
// syllable generator could collide with.
const std::unordered_set<std::string>& reserved_words() {
  static const std::unordered_set<std::string> kReserved = {
      "there", "is", "no", "evidence", "of", "noted", "seen", "mild", "small", "large", "the",
      "acute", "findings", "follow", "up", "take", "medication", "stable", "normal", "appearance",
      "bone", "dose", "mass", "lobe", "base", "side", "site", "tube", "line", "made", "make", "male",
      "more", "some", "same", "time", "note", "came", "come", "done", "gone", "fine", "like", "were",
      "zone", "pole", "vena", "aorta", "pelo", "nodule", "tone", "rate", "late", "data", "sole",
      "bile", "mole", "mode", "pore", "pure", "sure", "vote", "wide", "ride", "role", "rule", "safe",
      "sale", "save", "tale", "game", "name", "nine", "mine", "pine", "lime", "life", "wife", "fire",
      "tire", "hope", "pope", "rope", "kite", "bite", "site", "mute", "cute", "pale", "dime",
      "kilo", "memo", "logo", "solo", "demo", "menu", "radio", "patio", "tomato", "potato", "banana"};
  return kReserved;
}

constexpr std::string_view kConsonants = "bdfgklmnprstvz";
constexpr std::string_view kVowels = "aeiou";

std::string syllable_word(std::size_t index) {
  // Base-70 digits (consonant-vowel syllables), at least two syllables.
  const std::size_t base = kConsonants.size() * kVowels.size();
  std::size_t v = index + base;
  std::string out;
  std::vector<std::size_t> digits;
  while (v > 0) {
    digits.push_back(v % base);
    v /= base;
  }
  for (auto it = digits.rbegin(); it != digits.rend(); ++it) {
    out.push_back(kConsonants[*it / kVowels.size()]);
    out.push_back(kVowels[*it % kVowels.size()]);
  }
  return out;
}

const std::vector<std::string>& toy_word_table(std::size_t need) {
  static thread_local std::vector<std::string> table;
  static thread_local std::size_t next_index = 0;
  while (table.size() < need) {
    auto w = syllable_word(next_index++);
    if (!reserved_words().contains(w)) table.push_back(std::move(w));
  }
  return table;
}

}  // namespace

std::string toy_word(std::size_t rank) {
  if (rank == 0) throw Error("toy word ranks are 1-based");
  return toy_word_table(rank)[rank - 1];
}

Corpus synthesize_toy_corpus(const ToyPopulationSpec& spec) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, 0x70c0));

  std::vector<double> cumulative(spec.vocabulary_size);
  double acc = 0.0;
  for (std::size_t r = 0; r < spec.vocabulary_size; ++r) {
    acc += std::pow(static_cast<double>(r + 1), -spec.zipf_exponent);
    cumulative[r] = acc;
  }
  const auto& words = toy_word_table(spec.vocabulary_size);
  auto draw_word = [&]() -> const std::string& {
    const double u = rng.uniform() * acc;
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
    if (it == cumulative.end()) --it;
    return words[static_cast<std::size_t>(it - cumulative.begin())];
  };
  auto uniform_int = [&](int lo, int hi) { return lo + static_cast<int>(rng.index(static_cast<std::size_t>(hi - lo + 1))); };

  auto filler_sentence = [&](std::string& out) {
    const int n = uniform_int(spec.min_sentence_words, spec.max_sentence_words);
    std::string s;
    for (int i = 0; i < n; ++i) {
      if (i) s += ' ';
      s += draw_word();
    }
    s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
    if (!out.empty()) out += ' ';
    out += s + '.';
  };

  Corpus corpus;
  corpus.documents.reserve(spec.document_count);
  for (std::size_t d = 0; d < spec.document_count; ++d) {
    std::set<std::string> labels;
    if (rng.bernoulli(spec.finding_probability)) {
      const std::size_t seed_cond = rng.categorical(spec.seed_weights);
      labels.insert(std::string(kConditions[seed_cond]));
      for (std::size_t j = 0; j < 10; ++j)
        if (j != seed_cond && rng.bernoulli(spec.cooccurrence[seed_cond][j])) labels.insert(std::string(kConditions[j]));
    }
    Demographics demo;
    demo.sex = rng.bernoulli(spec.male_fraction) ? Sex::Male : Sex::Female;
    demo.age = std::clamp(static_cast<int>(std::lround(rng.normal(spec.age_mean, spec.age_sd))), kMinAge, kMaxAge);

    std::vector<Section> sections;
    for (std::size_t s = 0; s < spec.sections.size(); ++s) {
      std::string body;
      const int n = uniform_int(spec.min_sentences, spec.max_sentences);
      for (int i = 0; i < n; ++i) filler_sentence(body);
      if (s == 0) {
        for (const auto& l : labels) body += " There is " + l + '.';
        if (labels.empty()) body += " No acute findings.";
        else {
          // One explicitly negated absent condition per positive document.
          const auto& absent = kConditions[rng.index(kConditions.size())];
          if (!labels.contains(std::string(absent))) body += " No " + std::string(absent) + '.';
        }
      } else if (s == 1 && !labels.empty()) {
        body += " " + std::string(1, static_cast<char>(std::toupper(static_cast<unsigned char>(labels.begin()->front())))) +
                labels.begin()->substr(1) + " noted.";
      }
      sections.emplace_back(spec.sections[s], text::trim(body));
    }
    corpus.documents.emplace_back("toy" + std::to_string(d), std::move(sections), Provenance::real(), std::move(labels), demo);
  }
  return corpus;
}

}  // namespace collapselab
