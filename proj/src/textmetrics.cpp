#include "collapselab/textmetrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <unordered_map>

#include "collapselab/error.hpp"
#include "collapselab/safety.hpp"
#include "collapselab/stats.hpp"
#include "collapselab/text.hpp"

namespace collapselab::textmetrics {

namespace {

std::string join(const std::vector<std::string>& v, std::size_t begin, std::size_t n) {
  std::string out;
  for (std::size_t i = begin; i < begin + n; ++i) {
    if (i > begin) out += ' ';
    out += v[i];
  }
  return out;
}

}  // namespace

double repetition_rate(const std::vector<std::vector<std::string>>& token_lists, std::size_t n) {
  std::unordered_map<std::string, std::size_t> counts;
  for (const auto& toks : token_lists)
    for (std::size_t i = 0; i + n <= toks.size(); ++i) ++counts[join(toks, i, n)];
  if (counts.empty()) return 0.0;
  std::size_t repeated = 0;
  for (const auto& [g, c] : counts)
    if (c > 1) ++repeated;
  return static_cast<double>(repeated) / static_cast<double>(counts.size());
}

LexicalReport lexical_profile(const std::vector<Document>& documents, const std::set<std::string>& stopwords) {
  LexicalReport r;
  std::unordered_map<std::string, std::size_t> types;
  std::vector<std::vector<std::string>> lists;
  std::vector<double> lengths;
  std::set<std::string> texts;
  std::unordered_map<std::string, std::size_t> openings;
  std::size_t sentences_with_opening = 0;
  for (const auto& d : documents) {
    lists.push_back(d.words());
    lengths.push_back(static_cast<double>(d.words().size()));
    for (const auto& w : d.words()) ++types[w];
    r.total_words += d.words().size();
    texts.insert(d.full_text());
    for (const auto& [name, body] : d.sections())
      for (const auto& s : text::split_sentences(body)) {
        const auto w = text::words(s);
        if (w.size() < 3) continue;
        ++openings[join(w, 0, 3)];
        ++sentences_with_opening;
      }
  }
  if (r.total_words == 0) throw Error("lexical profile needs at least one token");
  r.distinct_words = types.size();
  r.ttr = static_cast<double>(r.distinct_words) / static_cast<double>(r.total_words);
  for (const auto& [w, c] : types)
    if (!stopwords.contains(w)) ++r.vocabulary_size;
  for (std::size_t n = 1; n <= 3; ++n) r.repetition_rate[n - 1] = repetition_rate(lists, n);
  r.mean_length = stats::mean(lengths);
  r.sd_length = stats::stddev(lengths);
  r.uniqueness = static_cast<double>(texts.size()) / static_cast<double>(documents.size());
  std::size_t best = 0;
  for (const auto& [tri, c] : openings)
    if (c > best || (c == best && tri < r.top_opening_trigram)) {
      best = c;
      r.top_opening_trigram = tri;
    }
  r.top_opening_trigram_share =
      sentences_with_opening ? static_cast<double>(best) / static_cast<double>(sentences_with_opening) : 0.0;
  return r;
}

MedicalTermReport medical_term_metrics(const std::vector<Document>& documents, const Lexicon& lexicon) {
  MedicalTermReport r;
  const PhraseMatcher matcher(lexicon.all_terms());
  std::set<std::string> unique;
  std::map<std::string, std::size_t> per_category;
  for (const auto& d : documents) {
    r.total_words += d.words().size();
    for (const auto& m : matcher.find(d.words())) {
      ++r.matches;
      r.matched_tokens += m.length;
      unique.insert(m.phrase);
      ++per_category[lexicon.category_of(m.phrase)];
      if (auto it = lexicon.tiers.find(m.phrase); it != lexicon.tiers.end()) ++r.per_tier[it->second];
    }
  }
  r.unique_terms = unique.size();
  if (r.total_words > 0) {
    r.density = static_cast<double>(r.matched_tokens) / static_cast<double>(r.total_words);
    for (const auto& [cat, terms] : lexicon.categories)
      r.per_category_per_1000[cat] = 1000.0 * static_cast<double>(per_category[cat]) / static_cast<double>(r.total_words);
  }
  return r;
}

TfIdf::TfIdf(const std::vector<std::vector<std::string>>& population) : n_(population.size()) {
  for (const auto& doc : population) {
    std::set<std::string> seen(doc.begin(), doc.end());
    for (const auto& t : seen) ++df_[t];
  }
}

double TfIdf::idf(const std::string& term) const {
  auto it = df_.find(term);
  const double df = it == df_.end() ? 0.0 : static_cast<double>(it->second);
  return std::log((1.0 + static_cast<double>(n_)) / (1.0 + df)) + 1.0;
}

std::map<std::string, double> TfIdf::vector(const std::vector<std::string>& tokens) const {
  std::map<std::string, double> v;
  for (const auto& t : tokens) v[t] += 1.0;
  for (auto& [t, w] : v) w *= idf(t);
  return v;
}

double cosine(const std::map<std::string, double>& a, const std::map<std::string, double>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (const auto& [t, w] : a) {
    na += w * w;
    if (auto it = b.find(t); it != b.end()) dot += w * it->second;
  }
  for (const auto& [t, w] : b) nb += w * w;
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(dot / std::sqrt(na * nb), 0.0, 1.0);
}

CoherenceReport coherence_score(const std::vector<Document>& documents) {
  std::vector<std::vector<std::vector<std::string>>> per_doc;
  std::vector<std::vector<std::string>> population;
  for (const auto& d : documents) {
    std::vector<std::vector<std::string>> sents;
    for (const auto& [name, body] : d.sections())
      for (const auto& s : text::split_sentences(body)) {
        auto w = text::words(s);
        if (!w.empty()) sents.push_back(std::move(w));
      }
    population.insert(population.end(), sents.begin(), sents.end());
    per_doc.push_back(std::move(sents));
  }
  const TfIdf tfidf(population);
  CoherenceReport r;
  double sum = 0.0;
  std::size_t pairs = 0;
  for (const auto& sents : per_doc) {
    if (sents.size() < 2) {
      ++r.documents_skipped;
      continue;
    }
    ++r.documents_scored;
    for (std::size_t i = 0; i + 1 < sents.size(); ++i) {
      sum += cosine(tfidf.vector(sents[i]), tfidf.vector(sents[i + 1]));
      ++pairs;
    }
  }
  if (pairs == 0) throw Error("coherence needs a document with at least two sentences");
  r.score = sum / static_cast<double>(pairs);
  return r;
}

CooccurrenceMatrix cooccurrence_from_sets(const std::vector<std::set<std::string>>& present) {
  CooccurrenceMatrix m;
  for (const auto& s : present) {
    std::array<bool, 10> has{};
    for (std::size_t i = 0; i < 10; ++i) has[i] = s.contains(std::string(kConditions[i]));
    for (std::size_t i = 0; i < 10; ++i) {
      if (!has[i]) continue;
      ++m.marginal[i];
      for (std::size_t j = 0; j < 10; ++j)
        if (has[j]) ++m.joint[i][j];
    }
  }
  for (std::size_t i = 0; i < 10; ++i) {
    m.row_defined[i] = m.marginal[i] > 0;
    for (std::size_t j = 0; j < 10; ++j)
      m.conditional[i][j] = m.row_defined[i] ? static_cast<double>(m.joint[i][j]) / static_cast<double>(m.marginal[i])
                                             : std::nan("");
  }
  return m;
}

CooccurrenceMatrix cooccurrence_matrix(const std::vector<Document>& documents, const FindingDetector& detector) {
  std::vector<std::set<std::string>> present;
  present.reserve(documents.size());
  for (const auto& d : documents) present.push_back(detector.positive_findings(d.full_text()));
  return cooccurrence_from_sets(present);
}

ContentReport content_ratio(const std::vector<Document>& documents, const Lexicon& lexicon) {
  if (lexicon.clinical_instructions.empty() || lexicon.templates.empty())
    throw Error("content ratio needs non-empty clinical and template pattern lists");
  const PhraseMatcher clinical(lexicon.clinical_instructions);
  const PhraseMatcher templ(lexicon.templates);
  ContentReport r;
  for (const auto& d : documents) {
    r.total_words += d.words().size();
    r.clinical_hits += clinical.find(d.words()).size();
    r.template_hits += templ.find(d.words()).size();
  }
  if (r.total_words > 0) {
    r.clinical_per_1000 = 1000.0 * static_cast<double>(r.clinical_hits) / static_cast<double>(r.total_words);
    r.template_per_1000 = 1000.0 * static_cast<double>(r.template_hits) / static_cast<double>(r.total_words);
  }
  if (r.template_per_1000 > 0.0) r.ratio = r.clinical_per_1000 / r.template_per_1000;
  return r;
}

namespace {

std::set<std::string> important_terms(const std::map<std::string, double>& v) {
  std::vector<std::pair<std::string, double>> items(v.begin(), v.end());
  std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  const auto keep = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(0.1 * static_cast<double>(items.size()))));
  std::set<std::string> out;
  for (std::size_t i = 0; i < std::min(keep, items.size()); ++i) out.insert(items[i].first);
  return out;
}

double jaccard(const std::set<std::string>& a, const std::set<std::string>& b) {
  if (a.empty() && b.empty()) return 0.0;
  std::size_t inter = 0;
  for (const auto& t : a) inter += b.count(t);
  return static_cast<double>(inter) / static_cast<double>(a.size() + b.size() - inter);
}

}  // namespace

std::vector<GroundingReport> grounding_metrics(const std::vector<TextPair>& pairs, const Lexicon& lexicon) {
  std::vector<std::vector<std::string>> population;
  for (const auto& p : pairs) {
    if (text::words(p.context).empty() || text::words(p.output).empty())
      throw Error("grounding metrics need non-empty context and output");
    population.push_back(text::words(p.context));
    population.push_back(text::words(p.output));
  }
  const TfIdf tfidf(population);
  const PhraseMatcher terms(lexicon.all_terms());
  std::vector<GroundingReport> out;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& cw = population[2 * i];
    const auto& ow = population[2 * i + 1];
    const auto cv = tfidf.vector(cw);
    const auto ov = tfidf.vector(ow);
    GroundingReport r;
    r.topic_cosine = cosine(cv, ov);
    r.important_term_jaccard = jaccard(important_terms(cv), important_terms(ov));
    std::set<std::string> ct, ot;
    for (const auto& m : terms.find(cw)) ct.insert(m.phrase);
    for (const auto& m : terms.find(ow)) ot.insert(m.phrase);
    r.output_has_terms = !ot.empty();
    if (ot.empty()) {
      r.grounding = 1.0;  // nothing asserted, nothing ungrounded
    } else {
      std::size_t hit = 0;
      for (const auto& t : ot) hit += ct.count(t);
      r.grounding = static_cast<double>(hit) / static_cast<double>(ot.size());
    }
    out.push_back(r);
  }
  return out;
}

GroundingReport grounding_metrics(const std::string& context, const std::string& output, const Lexicon& lexicon) {
  return grounding_metrics(std::vector<TextPair>{{context, output}}, lexicon).front();
}

std::size_t count_syllables(std::string_view word) {
  const auto w = text::to_lower(word);
  auto vowel = [](char c) { return c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u' || c == 'y'; };
  std::size_t groups = 0;
  bool in_group = false;
  for (char c : w) {
    const bool v = vowel(c);
    if (v && !in_group) ++groups;
    in_group = v;
  }
  const bool silent_e = w.size() > 2 && w.back() == 'e' && !vowel(w[w.size() - 2]) &&
                        !(w[w.size() - 2] == 'l' && !vowel(w[w.size() - 3]));
  if (silent_e && groups > 1) --groups;
  return std::max<std::size_t>(1, groups);
}

Readability readability(std::string_view raw) {
  Readability r;
  const auto sentences = text::split_sentences(raw);
  for (const auto& s : sentences)
    if (!text::words(s).empty()) ++r.sentences;
  if (r.sentences == 0) throw Error("readability needs at least one sentence");
  for (const auto& w : text::words(raw)) {
    ++r.words;
    r.syllables += count_syllables(w);
  }
  r.flesch = 206.835 - 1.015 * (static_cast<double>(r.words) / static_cast<double>(r.sentences)) -
             84.6 * (static_cast<double>(r.syllables) / static_cast<double>(r.words));
  return r;
}

OverlapScores overlap_scores(const std::vector<std::string>& candidates, const std::vector<std::string>& references) {
  if (candidates.size() != references.size()) throw Error("overlap scores need paired candidate/reference lists");
  OverlapScores s;
  std::array<double, 4> matched{}, total{};
  double cand_len = 0.0, ref_len = 0.0, rouge_sum = 0.0;
  for (std::size_t p = 0; p < candidates.size(); ++p) {
    const auto c = text::words(candidates[p]);
    const auto r = text::words(references[p]);
    cand_len += static_cast<double>(c.size());
    ref_len += static_cast<double>(r.size());
    for (std::size_t n = 1; n <= 4; ++n) {
      std::unordered_map<std::string, std::size_t> cc, rc;
      for (std::size_t i = 0; i + n <= c.size(); ++i) ++cc[join(c, i, n)];
      for (std::size_t i = 0; i + n <= r.size(); ++i) ++rc[join(r, i, n)];
      for (const auto& [g, k] : cc) {
        total[n - 1] += static_cast<double>(k);
        if (auto it = rc.find(g); it != rc.end()) matched[n - 1] += static_cast<double>(std::min(k, it->second));
      }
    }
    if (!c.empty() && !r.empty()) {
      const double lcs = static_cast<double>(stats::lcs_length(c, r));
      if (lcs > 0.0) {
        const double prec = lcs / static_cast<double>(c.size());
        const double rec = lcs / static_cast<double>(r.size());
        rouge_sum += 2.0 * prec * rec / (prec + rec);
      }
    }
  }
  if (cand_len == 0.0) {
    s.empty_candidate = true;
    return s;
  }
  const double bp = cand_len > ref_len ? 1.0 : std::exp(1.0 - ref_len / cand_len);
  double log_sum = 0.0;
  for (std::size_t n = 1; n <= 4; ++n) {
    const double pn = total[n - 1] > 0.0 ? matched[n - 1] / total[n - 1] : 0.0;
    if (pn == 0.0) {
      for (std::size_t m = n; m <= 4; ++m) s.bleu[m - 1] = 0.0;
      break;
    }
    log_sum += std::log(pn);
    s.bleu[n - 1] = bp * std::exp(log_sum / static_cast<double>(n));
  }
  s.rouge_l = candidates.empty() ? 0.0 : rouge_sum / static_cast<double>(candidates.size());
  return s;
}

std::map<std::string, double> section_completeness(const std::vector<Document>& documents,
                                                   const std::vector<std::string>& schema) {
  if (schema.empty()) throw Error("section completeness needs a non-empty schema");
  std::map<std::string, double> out;
  for (const auto& name : schema) {
    std::size_t complete = 0;
    for (const auto& d : documents) {
      const std::string* body = d.section(name);
      if (body && !text::trim(*body).empty()) ++complete;
    }
    out[name] = documents.empty() ? 0.0 : static_cast<double>(complete) / static_cast<double>(documents.size());
  }
  return out;
}

}  // namespace collapselab::textmetrics
