#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include <CLI11.hpp>

#include "collapselab/corpus.hpp"
#include "collapselab/error.hpp"
#include "collapselab/experiment.hpp"
#include "collapselab/lexicon.hpp"
#include "collapselab/population.hpp"
#include "collapselab/stats.hpp"
#include "collapselab/textmetrics.hpp"

namespace cl = collapselab;
namespace fs = std::filesystem;

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

void emit(const std::string& text, const std::string& out) {
  if (out.empty() || out == "-") {
    std::cout << text;
    return;
  }
  if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
  std::ofstream f(out, std::ios::binary);
  if (!f) throw cl::Error("cannot write " + out);
  f << text;
}

std::string metric_table(const std::map<std::string, double>& m, cl::ReportFormat format) {
  std::string out;
  if (format == cl::ReportFormat::Csv) {
    out = "metric,value\n";
    for (const auto& [k, v] : m) out += k + "," + num(v) + "\n";
  } else {
    for (const auto& [k, v] : m) out += "{\"metric\":\"" + k + "\",\"value\":" + num(v) + "}\n";
  }
  return out;
}

std::map<std::string, double> corpus_metrics(const std::vector<cl::Document>& docs) {
  using namespace cl::textmetrics;
  const auto lexicon = cl::default_lexicon();
  std::map<std::string, double> m;
  const auto lex = lexical_profile(docs, lexicon.stopwords);
  m["documents"] = static_cast<double>(docs.size());
  m["ttr"] = lex.ttr;
  m["vocabulary"] = static_cast<double>(lex.distinct_words);
  m["repetition_1"] = lex.repetition_rate[0];
  m["repetition_2"] = lex.repetition_rate[1];
  m["repetition_3"] = lex.repetition_rate[2];
  m["uniqueness"] = lex.uniqueness;
  m["mean_length"] = lex.mean_length;
  m["sd_length"] = lex.sd_length;
  m["opening_trigram_share"] = lex.top_opening_trigram_share;
  const auto med = medical_term_metrics(docs, lexicon);
  m["medical_term_density"] = med.density;
  m["unique_medical_terms"] = static_cast<double>(med.unique_terms);
  m["coherence"] = coherence_score(docs).score;
  const auto content = content_ratio(docs, lexicon);
  m["clinical_rate"] = content.clinical_per_1000;
  m["template_rate"] = content.template_per_1000;
  double flesch = 0.0;
  std::size_t scored = 0;
  for (const auto& d : docs) {
    const auto r = readability(d.full_text());
    if (r.words == 0) continue;
    flesch += r.flesch;
    ++scored;
  }
  if (scored) m["flesch"] = flesch / static_cast<double>(scored);
  return m;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"collapselab: recursive-training collapse experiments"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(cl::kToolVersion));

  std::string config_path, out, format = "csv", run_dir, metric, corpus_format = "jsonl", kind = "text", input;
  std::uint64_t seed = 0;
  std::size_t workers = 1, documents = 5000, vocabulary = 2000, records = 5000;
  int generation = -1;
  std::vector<std::string> panels;

  auto* synth = app.add_subcommand("synth-corpus", "Write a seeded toy corpus or feature population");
  synth->add_option("--kind", kind, "text or population")->check(CLI::IsMember({"text", "population"}));
  synth->add_option("--out", out, "Output file")->required();
  synth->add_option("--seed", seed, "Generator seed")->default_val(42);
  synth->add_option("--documents", documents, "Documents (text)")->default_val(5000);
  synth->add_option("--vocabulary", vocabulary, "Vocabulary size (text)")->default_val(2000);
  synth->add_option("--records", records, "Records (population)")->default_val(5000);
  synth->add_option("--corpus-format", corpus_format, "jsonl or txt")->check(CLI::IsMember({"jsonl", "txt"}));

  auto* run = app.add_subcommand("run", "Run every condition of an experiment config");
  auto* seed_opt = run->add_option("--seed", seed, "Master seed override");
  run->add_option("--config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  run->add_option("--out", out, "Run directory (overrides the config)");
  run->add_option("--workers", workers, "Conditions run in parallel")->default_val(1);
  run->add_option("--format", format, "Report format")->check(CLI::IsMember({"csv", "jsonl"}));

  auto* metrics = app.add_subcommand("metrics", "Text metrics of a corpus file");
  metrics->add_option("--input", input, "Corpus file")->required()->check(CLI::ExistingFile);
  metrics->add_option("--corpus-format", corpus_format, "jsonl or txt")->check(CLI::IsMember({"jsonl", "txt"}));
  metrics->add_option("--out", out, "Output file (default stdout)");
  metrics->add_option("--format", format, "Table format")->check(CLI::IsMember({"csv", "jsonl"}));

  auto* compare = app.add_subcommand("compare", "Compare conditions of a run at one generation");
  compare->add_option("--run", run_dir, "Run directory")->required()->check(CLI::ExistingDirectory);
  compare->add_option("--metric", metric, "Metric name")->required();
  compare->add_option("--generation", generation, "Generation (default: last)");
  compare->add_option("--out", out, "Output file (default stdout)");

  auto* plot = app.add_subcommand("plot-data", "Emit per-panel series files from a run");
  plot->add_option("--run", run_dir, "Run directory")->required()->check(CLI::ExistingDirectory);
  plot->add_option("--panel", panels, "Panel or metric name (repeatable)")->required();
  plot->add_option("--out", out, "Output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) {
      if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
      if (kind == "text") {
        cl::ToyPopulationSpec spec;
        spec.document_count = documents;
        spec.vocabulary_size = vocabulary;
        spec.seed = seed;
        spec.validate();
        const auto corpus = cl::synthesize_toy_corpus(spec);
        cl::write_documents(out, corpus.documents, cl::parse_corpus_format(corpus_format));
        std::cerr << "wrote " << corpus.size() << " documents to " << out << "\n";
      } else {
        cl::ToyFeatureSpec spec;
        spec.records = records;
        spec.seed = seed;
        const auto pop = cl::synthesize_toy_population(spec);
        std::vector<std::string> labels;
        for (const auto& [name, prevalence] : spec.labels) labels.push_back(name);
        cl::save_population(out, pop, labels);
        std::cerr << "wrote " << pop.size() << " records to " << out << "\n";
      }
      return 0;
    }

    if (*run) {
      auto config = cl::load_experiment_config(config_path);
      if (*seed_opt) config = cl::with_master_seed(std::move(config), seed);
      cl::RunOptions opts;
      opts.out = out;
      opts.workers = workers;
      opts.format = cl::parse_report_format(format);
      const auto manifest = cl::run_experiment(config, opts);
      for (const auto& c : manifest.conditions) {
        std::cerr << c.name << ": " << c.rows.size() << " rows";
        if (c.error) std::cerr << ", FAILED: " << *c.error;
        std::cerr << "\n";
      }
      std::cerr << "run " << (manifest.complete ? "complete" : "INCOMPLETE") << " in " << manifest.directory.string()
                << " (" << num(manifest.wall_clock_seconds) << " s, config " << manifest.config_hash << ")\n";
      return manifest.complete ? 0 : 1;
    }

    if (*metrics) {
      const auto corpus = cl::ingest_documents(input, cl::parse_corpus_format(corpus_format));
      emit(metric_table(corpus_metrics(corpus.documents), cl::parse_report_format(format)), out);
      return 0;
    }

    if (*compare) {
      const auto reports = cl::load_run_reports(run_dir);
      std::string table = "condition,generation,seeds,mean,sd,difference\n";
      std::optional<double> baseline;
      for (const auto& [condition, rows] : reports) {
        int g = generation;
        if (g < 0)
          for (const auto& r : rows) g = std::max(g, r.generation);
        std::vector<double> values;
        for (const auto& r : rows)
          if (r.generation == g)
            if (auto it = r.metrics.find(metric); it != r.metrics.end()) values.push_back(it->second.value);
        if (values.empty()) throw cl::Error("metric '" + metric + "' missing for condition '" + condition + "'");
        const double mean = cl::stats::mean(values);
        if (!baseline) baseline = mean;
        table += condition + "," + std::to_string(g) + "," + std::to_string(values.size()) + "," + num(mean) + "," +
                 num(cl::stats::stddev(values)) + "," + num(mean - *baseline) + "\n";
      }
      emit(table, out);
      return 0;
    }

    if (*plot) {
      for (const auto& panel : panels)
        for (const auto& path : cl::emit_plot_data(run_dir, panel, out)) std::cerr << "wrote " << path.string() << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
