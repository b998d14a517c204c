#include "fieldguide/service.hpp"

#include "fieldguide/error.hpp"
#include "fieldguide/session.hpp"

#include <httplib.h>
#include <json.hpp>

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdio>
#include <deque>
#include <fstream>
#include <map>
#include <mutex>
#include <shared_mutex>
#include <sstream>
#include <thread>

namespace fieldguide {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::int64_t now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument:
    case ErrorCode::parse: return 400;
    case ErrorCode::not_found: return 404;
    case ErrorCode::conflict:
    case ErrorCode::budget_exhausted: return 409;
    case ErrorCode::precondition: return 422;
    case ErrorCode::io:
    case ErrorCode::divergence: return 500;
  }
  return 500;
}

ApiResponse reply(int status, const json& body) { return {status, body.dump()}; }

ApiResponse error_reply(int status, const std::string& code, const std::string& message) {
  return reply(status, json{{"code", code}, {"message", message}});
}

std::vector<double> to_std(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vector from_std(const std::vector<double>& v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::vector<std::string> split_path(const std::string& path) {
  std::vector<std::string> out;
  std::stringstream ss(path);
  std::string part;
  while (std::getline(ss, part, '/'))
    if (!part.empty()) out.push_back(part);
  return out;
}

std::string numbered(char prefix, std::uint64_t n) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%c%06llu", prefix, static_cast<unsigned long long>(n));
  return buf;
}

json metrics_json(const Metrics& m) {
  return {{"acc_unseen", m.acc_unseen}, {"acc_seen", m.acc_seen}, {"harmonic", m.harmonic}, {"excluded", m.excluded}};
}

// Immutable view of a session; replaced wholesale on every write.
struct Snapshot {
  SessionState state;
  bool finalized = false;
  std::optional<std::string> job_id;
  std::int64_t created_ms = 0;
  std::int64_t updated_ms = 0;
};

struct Entry {
  std::mutex write_mu;
  mutable std::mutex snap_mu;
  std::shared_ptr<const Snapshot> snap;

  std::shared_ptr<const Snapshot> load() const {
    std::lock_guard lock(snap_mu);
    return snap;
  }
  void store(std::shared_ptr<const Snapshot> s) {
    std::lock_guard lock(snap_mu);
    snap = std::move(s);
  }
};

struct Job {
  std::string id;
  std::string status = "queued";
  std::optional<Metrics> metrics;
  std::string error;
  std::map<std::string, Vector> descriptors;
};

}  // namespace

struct Service::Impl {
  Dataset ds;
  EmbeddingModel model;
  ServiceOptions opts;

  std::shared_mutex sessions_mu;
  std::map<std::string, std::shared_ptr<Entry>> sessions;
  std::uint64_t next_session = 1;

  std::mutex jobs_mu;
  std::condition_variable jobs_cv;
  std::condition_variable idle_cv;
  std::map<std::string, std::shared_ptr<Job>> jobs;
  std::deque<std::shared_ptr<Job>> queue;
  std::size_t running = 0;
  std::uint64_t next_job = 1;
  bool stopping = false;
  std::vector<std::thread> workers;

  Impl(Dataset d, EmbeddingModel m, ServiceOptions o) : ds(std::move(d)), model(std::move(m)), opts(std::move(o)) {
    if (ds.schema.dim() != model.attribute_dim() || ds.feature_dim() != model.feature_dim())
      throw Error(ErrorCode::invalid_argument, "model dimensions do not match the dataset");
    fs::create_directories(sessions_dir());
    reload();
    const std::size_t n = std::max<std::size_t>(1, opts.job_workers);
    for (std::size_t k = 0; k < n; ++k) workers.emplace_back([this] { work(); });
  }

  ~Impl() {
    {
      std::lock_guard lock(jobs_mu);
      stopping = true;
    }
    jobs_cv.notify_all();
    for (auto& t : workers) t.join();
  }

  fs::path sessions_dir() const { return opts.data_dir / "sessions"; }

  // ---- persistence

  void persist(const std::string& id, const Snapshot& s) {
    json j{{"session_id", id},
           {"created_ms", s.created_ms},
           {"updated_ms", s.updated_ms},
           {"finalized", s.finalized},
           {"training_job_id", s.job_id ? json(*s.job_id) : json(nullptr)},
           {"transcript", json::parse(session_to_json(s.state))}};
    const fs::path final_path = sessions_dir() / (id + ".json");
    const fs::path tmp = sessions_dir() / (id + ".json.tmp");
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      out << j.dump(2) << '\n';
      if (!out) throw Error(ErrorCode::io, "cannot write " + tmp.string());
    }
    fs::rename(tmp, final_path);
  }

  void reload() {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(sessions_dir()))
      if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      std::ifstream in(f, std::ios::binary);
      std::stringstream ss;
      ss << in.rdbuf();
      try {
        const json j = json::parse(ss.str());
        auto snap = std::make_shared<Snapshot>();
        const std::string id = j.at("session_id").get<std::string>();
        snap->state = session_from_json(j.at("transcript").dump(), ds.schema);
        snap->finalized = j.value("finalized", false);
        if (j.contains("training_job_id") && !j["training_job_id"].is_null())
          snap->job_id = j["training_job_id"].get<std::string>();
        snap->created_ms = j.value("created_ms", std::int64_t{0});
        snap->updated_ms = j.value("updated_ms", std::int64_t{0});
        auto entry = std::make_shared<Entry>();
        entry->snap = std::move(snap);
        sessions[id] = std::move(entry);
        if (id.size() > 1 && id[0] == 's') next_session = std::max<std::uint64_t>(next_session, std::stoull(id.substr(1)) + 1);
      } catch (const json::exception& e) {
        throw Error(ErrorCode::parse, f.string() + ": " + e.what());
      } catch (const Error& e) {
        throw Error(e.code(), f.string() + ": " + e.what());
      } catch (const std::logic_error& e) {
        throw Error(ErrorCode::parse, f.string() + ": bad session id");
      }
    }
  }

  // ---- jobs

  void work() {
    for (;;) {
      std::shared_ptr<Job> job;
      {
        std::unique_lock lock(jobs_mu);
        jobs_cv.wait(lock, [&] { return stopping || !queue.empty(); });
        if (queue.empty()) return;
        job = queue.front();
        queue.pop_front();
        job->status = "running";
        ++running;
      }
      std::optional<Metrics> metrics;
      std::string error;
      try {
        const auto clf = train_classifier(model, ds, job->descriptors, opts.classifier);
        metrics = evaluate(clf, model, ds, opts.eval_mode);
      } catch (const std::exception& e) {
        error = e.what();
      }
      {
        std::lock_guard lock(jobs_mu);
        job->metrics = std::move(metrics);
        job->error = std::move(error);
        job->status = job->error.empty() ? "done" : "failed";
        --running;
      }
      idle_cv.notify_all();
    }
  }

  std::string enqueue(std::map<std::string, Vector> descriptors) {
    std::lock_guard lock(jobs_mu);
    auto job = std::make_shared<Job>();
    job->id = numbered('j', next_job++);
    job->descriptors = std::move(descriptors);
    jobs[job->id] = job;
    queue.push_back(job);
    jobs_cv.notify_one();
    return job->id;
  }

  void wait_for_jobs() {
    std::unique_lock lock(jobs_mu);
    idle_cv.wait(lock, [&] { return queue.empty() && running == 0; });
  }

  // ---- lookup

  std::shared_ptr<Entry> find(const std::string& id) {
    std::shared_lock lock(sessions_mu);
    auto it = sessions.find(id);
    if (it == sessions.end()) throw Error(ErrorCode::not_found, "unknown session '" + id + "'");
    return it->second;
  }

  // ---- endpoints

  ApiResponse create_session(const std::string& body) {
    const json j = json::parse(body);
    if (!j.is_object()) throw Error(ErrorCode::invalid_argument, "request body must be a JSON object");
    for (const char* key : {"novel_name", "similar_class_id", "strategy", "budget"})
      if (!j.contains(key)) throw Error(ErrorCode::invalid_argument, std::string("missing field '") + key + "'");
    if (!j.at("budget").is_number_unsigned())
      throw Error(ErrorCode::invalid_argument, "budget must be a non-negative integer");
    std::optional<Vector> exemplar;
    if (j.contains("exemplar") && !j["exemplar"].is_null())
      exemplar = from_std(j["exemplar"].get<std::vector<double>>());

    auto snap = std::make_shared<Snapshot>();
    snap->state = open_session(ds, j.at("novel_name").get<std::string>(), j.at("similar_class_id").get<std::string>(),
                               Strategy::parse(j.at("strategy").get<std::string>()),
                               j.at("budget").get<std::size_t>(), std::move(exemplar));
    snap->created_ms = snap->updated_ms = now_ms();

    std::unique_lock lock(sessions_mu);
    const std::string id = numbered('s', next_session++);
    persist(id, *snap);
    auto entry = std::make_shared<Entry>();
    entry->snap = std::move(snap);
    sessions[id] = std::move(entry);
    return reply(201, json{{"session_id", id}});
  }

  json session_json(const std::string& id, const Snapshot& s) const {
    const auto& st = s.state;
    json history = json::array();
    for (const auto& rec : st.log)
      history.push_back({{"round", rec.round},
                         {"group_id", rec.group},
                         {"group_name", ds.schema.group_name(rec.group)},
                         {"values", rec.values},
                         {"timestamp_ms", rec.timestamp_ms}});
    json answered = json::array();
    for (const auto& [g, v] : st.answered) answered.push_back(g);
    return {{"session_id", id},
            {"novel_name", st.novel_id},
            {"similar_class_id", st.similar_id},
            {"strategy", st.strategy.name()},
            {"budget", st.budget},
            {"rounds_answered", st.answered.size()},
            {"answered_groups", answered},
            {"imputed", to_std(st.imputed)},
            {"similar_attributes", to_std(st.similar_attributes)},
            {"history", history},
            {"finalized", s.finalized},
            {"training_job_id", s.job_id ? json(*s.job_id) : json(nullptr)},
            {"created_ms", s.created_ms},
            {"updated_ms", s.updated_ms}};
  }

  ApiResponse get_session(const std::string& id) { return reply(200, session_json(id, *find(id)->load())); }

  ApiResponse list_sessions() {
    std::vector<std::pair<std::string, std::shared_ptr<Entry>>> all;
    {
      std::shared_lock lock(sessions_mu);
      all.assign(sessions.begin(), sessions.end());
    }
    json out = json::array();
    for (const auto& [id, e] : all) {
      const auto s = e->load();
      out.push_back({{"session_id", id},
                     {"novel_name", s->state.novel_id},
                     {"strategy", s->state.strategy.name()},
                     {"budget", s->state.budget},
                     {"rounds_answered", s->state.answered.size()},
                     {"finalized", s->finalized}});
    }
    return reply(200, out);
  }

  ApiResponse next_query(const std::string& id) {
    const auto s = find(id)->load();
    if (s->finalized) throw Error(ErrorCode::conflict, "session '" + id + "' is finalized");
    const auto p = propose_query(s->state, ScoringContext{ds, &model});
    json attrs = json::array();
    for (std::size_t k = 0; k < p.members.size(); ++k)
      attrs.push_back({{"index", p.members[k]},
                       {"name", p.member_names[k]},
                       {"current_value", s->state.imputed[static_cast<Eigen::Index>(p.members[k])]}});
    return reply(200, json{{"round", p.round},
                           {"group_id", p.group},
                           {"group_name", ds.schema.group_name(p.group)},
                           {"attributes", attrs}});
  }

  ApiResponse answer(const std::string& id, const std::string& body) {
    auto entry = find(id);
    const json j = json::parse(body);
    if (!j.is_object() || !j.contains("group_id") || !j.contains("values"))
      throw Error(ErrorCode::invalid_argument, "body needs 'group_id' and 'values'");
    if (!j.at("group_id").is_number_unsigned()) throw Error(ErrorCode::invalid_argument, "group_id must be an integer");
    const auto group = j.at("group_id").get<std::size_t>();
    const auto values = j.at("values").get<std::vector<double>>();

    std::lock_guard write(entry->write_mu);
    const auto cur = entry->load();
    if (cur->finalized) throw Error(ErrorCode::conflict, "session '" + id + "' is finalized");
    if (group < ds.schema.group_count() && cur->state.answered.count(group))
      throw Error(ErrorCode::conflict, "group " + std::to_string(group) + " already answered");
    for (double v : values)
      if (!(v >= 0.0 && v <= 1.0)) throw Error(ErrorCode::invalid_argument, "answer values must lie in [0, 1]");
    auto next = std::make_shared<Snapshot>(*cur);
    next->state = submit_answer(cur->state, ds.schema, group, values);
    next->updated_ms = now_ms();
    persist(id, *next);
    entry->store(next);
    return reply(200, json{{"imputed_changed_indices", ds.schema.members(group)}});
  }

  ApiResponse finalize_session(const std::string& id) {
    auto entry = find(id);
    std::lock_guard write(entry->write_mu);
    const auto cur = entry->load();
    if (cur->finalized) throw Error(ErrorCode::conflict, "session '" + id + "' is already finalized");
    auto next = std::make_shared<Snapshot>(*cur);
    next->finalized = true;
    next->updated_ms = now_ms();

    std::map<std::string, Vector> descriptors;
    {
      std::shared_lock lock(sessions_mu);
      for (const auto& [sid, e] : sessions) {
        if (sid == id) continue;
        const auto s = e->load();
        if (s->finalized) descriptors[s->state.novel_id] = s->state.imputed;
      }
    }
    const auto [name, descriptor] = finalize(cur->state);
    descriptors[name] = descriptor;
    next->job_id = enqueue(std::move(descriptors));
    persist(id, *next);
    entry->store(next);
    return reply(200, json{{"descriptor", to_std(descriptor)}, {"training_job_id", *next->job_id}});
  }

  ApiResponse get_job(const std::string& id) {
    std::lock_guard lock(jobs_mu);
    auto it = jobs.find(id);
    if (it == jobs.end()) throw Error(ErrorCode::not_found, "unknown job '" + id + "'");
    const auto& job = *it->second;
    json out{{"job_id", job.id}, {"status", job.status}};
    if (job.metrics) out["metrics"] = metrics_json(*job.metrics);
    if (!job.error.empty()) out["error"] = job.error;
    return reply(200, out);
  }

  ApiResponse classes() const {
    json out = json::array();
    for (const auto& id : ds.base) {
      const auto& rec = ds.record(id);
      out.push_back({{"id", rec.id}, {"name", rec.name}, {"supercategory", rec.parent}});
    }
    return reply(200, out);
  }

  ApiResponse attributes() const {
    json attrs = json::array(), groups = json::array();
    for (std::size_t j = 0; j < ds.schema.dim(); ++j)
      attrs.push_back({{"index", j}, {"name", ds.schema.attribute_name(j)}, {"group_id", ds.schema.group_of(j)}});
    for (std::size_t g = 0; g < ds.schema.group_count(); ++g)
      groups.push_back({{"id", g}, {"name", ds.schema.group_name(g)}, {"members", ds.schema.members(g)}});
    return reply(200, json{{"attributes", attrs}, {"groups", groups}});
  }

  ApiResponse route(const std::string& method, const std::string& path, const std::string& body) {
    const auto parts = split_path(path);
    if (parts.size() < 3 || parts[0] != "api" || parts[1] != "v1")
      return error_reply(404, "not_found", "no such endpoint: " + path);
    const std::vector<std::string> p(parts.begin() + 2, parts.end());
    const bool get = method == "GET", post = method == "POST";

    if (p[0] == "sessions") {
      if (p.size() == 1 && post) return create_session(body);
      if (p.size() == 1 && get) return list_sessions();
      if (p.size() == 2 && get) return get_session(p[1]);
      if (p.size() == 3 && get && p[2] == "next-query") return next_query(p[1]);
      if (p.size() == 3 && post && p[2] == "answers") return answer(p[1], body);
      if (p.size() == 3 && post && p[2] == "finalize") return finalize_session(p[1]);
    } else if (p[0] == "jobs" && p.size() == 2 && get) {
      return get_job(p[1]);
    } else if (p[0] == "classes" && p.size() == 1 && get) {
      return classes();
    } else if (p[0] == "attributes" && p.size() == 1 && get) {
      return attributes();
    }
    return error_reply(404, "not_found", "no such endpoint: " + method + " " + path);
  }
};

Service::Service(Dataset ds, EmbeddingModel model, ServiceOptions options)
    : impl_(std::make_unique<Impl>(std::move(ds), std::move(model), std::move(options))) {}

Service::~Service() = default;

ApiResponse Service::handle(const std::string& method, const std::string& path, const std::string& body) {
  try {
    return impl_->route(method, path, body);
  } catch (const Error& e) {
    return error_reply(http_status(e.code()), to_string(e.code()), e.what());
  } catch (const json::exception& e) {
    return error_reply(400, "parse", std::string("malformed request: ") + e.what());
  } catch (const std::exception& e) {
    return error_reply(500, "internal", e.what());
  }
}

void Service::wait_for_jobs() { impl_->wait_for_jobs(); }
const Dataset& Service::dataset() const { return impl_->ds; }
const EmbeddingModel& Service::model() const { return impl_->model; }
const ServiceOptions& Service::options() const { return impl_->opts; }

// ---------------------------------------------------------------------------

struct HttpServer::Impl {
  Service& service;
  httplib::Server server;

  explicit Impl(Service& s) : service(s) {
    if (const auto& dir = service.options().static_dir) {
      if (!server.set_mount_point("/", dir->string()))
        throw Error(ErrorCode::io, "static directory not found: " + dir->string());
    }
    const auto forward = [this](const httplib::Request& req, httplib::Response& res) {
      const auto r = service.handle(req.method, req.path, req.body);
      res.status = r.status;
      res.set_content(r.body, "application/json");
    };
    server.Get(R"(/api/v1/.*)", forward);
    server.Post(R"(/api/v1/.*)", forward);
  }
};

HttpServer::HttpServer(Service& service) : impl_(std::make_unique<Impl>(service)) {}
HttpServer::~HttpServer() = default;

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int bound = impl_->server.bind_to_any_port(host);
    if (bound < 0) throw Error(ErrorCode::io, "cannot bind " + host);
    return bound;
  }
  if (!impl_->server.bind_to_port(host, port))
    throw Error(ErrorCode::io, "cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void HttpServer::run() { impl_->server.listen_after_bind(); }
void HttpServer::stop() { impl_->server.stop(); }

}  // namespace fieldguide
