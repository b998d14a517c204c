#include "fieldguide/bench.hpp"
#include "fieldguide/error.hpp"
#include "fieldguide/service.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>

using namespace fieldguide;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

HttpServer* active_server = nullptr;

void on_signal(int) {
  if (active_server) active_server->stop();
}

EmbeddingModel model_for(const Dataset& ds, const std::string& model_path, std::uint64_t seed) {
  if (!model_path.empty()) return EmbeddingModel::load(model_path);
  ModelConfig cfg;
  cfg.seed = seed;
  std::cerr << "training embedding model (seed " << seed << ")\n";
  return train_embedding_model(ds, cfg);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Interactive zero-shot learning with field-guide style attribute queries"};
  app.require_subcommand(1);

  std::string synth_config, synth_out;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset directory");
  synth->add_option("--config", synth_config, "SynthConfig JSON (defaults when omitted)");
  synth->add_option("--out", synth_out, "Output directory")->required();

  std::string train_data, train_model, train_config;
  std::uint64_t train_seed = 1;
  auto* train = app.add_subcommand("train", "Train the embedding model on base classes");
  train->add_option("--data", train_data, "Dataset directory")->required();
  train->add_option("--model", train_model, "Output checkpoint")->required();
  train->add_option("--seed", train_seed, "Model seed");
  train->add_option("--config", train_config, "ModelConfig JSON");

  std::string sweep_config, sweep_out, sweep_summary;
  auto* sweep = app.add_subcommand("sweep", "Accuracy-vs-budget sweep");
  sweep->add_option("--config", sweep_config, "Sweep JSON")->required();
  sweep->add_option("--out", sweep_out, "curves.csv path")->required();
  sweep->add_option("--summary", sweep_summary, "Per (strategy, budget) mean/std CSV");

  std::string lat_data, lat_model, lat_out;
  std::vector<std::string> lat_transcripts;
  auto* latents = app.add_subcommand("export-latents", "Write latent encodings as CSV");
  latents->add_option("--data", lat_data, "Dataset directory")->required();
  latents->add_option("--model", lat_model, "Checkpoint")->required();
  latents->add_option("--out", lat_out, "Output CSV")->required();
  latents->add_option("--transcript", lat_transcripts, "Session transcript JSON (repeatable)");

  std::string serve_data, serve_model, serve_state = "fieldguide_state", serve_static, serve_host = "127.0.0.1";
  int serve_port = 8080;
  std::uint64_t serve_seed = 1;
  std::size_t serve_workers = 1;
  auto* serve = app.add_subcommand("serve", "Run the annotation HTTP service");
  serve->add_option("--data", serve_data, "Dataset directory")->required();
  serve->add_option("--model", serve_model, "Checkpoint (trained on start when omitted)");
  serve->add_option("--seed", serve_seed, "Model seed when training on start");
  serve->add_option("--state", serve_state, "Directory for session transcripts");
  serve->add_option("--static", serve_static, "UI bundle directory served at /");
  serve->add_option("--host", serve_host, "Bind address");
  serve->add_option("--port", serve_port, "Port (0 picks a free one)");
  serve->add_option("--workers", serve_workers, "Training job workers");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) {
      const SynthConfig cfg = synth_config.empty() ? SynthConfig{} : synth_config_from_json(read_file(synth_config));
      save_dataset(generate_synthetic(cfg), synth_out);
      std::cout << "wrote " << synth_out << "\n";
    } else if (*train) {
      ModelConfig cfg = train_config.empty() ? ModelConfig{} : model_config_from_json_text(read_file(train_config));
      cfg.seed = train_seed;
      const Dataset ds = normalize_attributes(load_dataset(train_data));
      TrainingTrace trace;
      const auto model = train_embedding_model(ds, cfg, &trace);
      model.save(train_model);
      std::cout << "loss " << format_double(trace.total.front()) << " -> " << format_double(trace.total.back())
                << "\nwrote " << train_model << "\n";
    } else if (*sweep) {
      const auto cfg = SweepConfig::from_json(read_file(sweep_config));
      const auto rows = run_budget_sweep(cfg);
      write_curves_csv(rows, sweep_out);
      if (!sweep_summary.empty()) {
        std::ofstream out(sweep_summary, std::ios::binary);
        out << summary_to_csv(aggregate(rows));
        if (!out) throw Error(ErrorCode::io, "cannot write " + sweep_summary);
      }
      std::cout << "wrote " << rows.size() << " rows to " << sweep_out << "\n";
    } else if (*latents) {
      const Dataset ds = normalize_attributes(load_dataset(lat_data));
      const auto model = EmbeddingModel::load(lat_model);
      std::map<std::string, Vector> descriptors;
      for (const auto& n : ds.novel) descriptors[n] = ds.attributes(n);
      std::vector<SessionState> transcripts;
      for (const auto& t : lat_transcripts) {
        transcripts.push_back(session_from_json(read_file(t), ds.schema));
        descriptors[transcripts.back().novel_id] = transcripts.back().imputed;
      }
      export_latents(model, ds, descriptors, transcripts, lat_out);
      std::cout << "wrote " << lat_out << "\n";
    } else if (*serve) {
      Dataset ds = normalize_attributes(load_dataset(serve_data));
      auto model = model_for(ds, serve_model, serve_seed);
      ServiceOptions opts;
      opts.data_dir = serve_state;
      if (!serve_static.empty()) opts.static_dir = serve_static;
      opts.job_workers = serve_workers;
      Service service(std::move(ds), std::move(model), opts);
      HttpServer server(service);
      const int port = server.bind(serve_host, serve_port);
      active_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cout << "listening on http://" << serve_host << ":" << port << std::endl;
      server.run();
      active_server = nullptr;
    }
  } catch (const Error& e) {
    std::cerr << "error (" << to_string(e.code()) << "): " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
