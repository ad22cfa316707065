#pragma once

// Live test sessions backed by an append-only event log, one file per
// session. The in-memory state is always the fold of the log.

#include <atomic>
#include <cctype>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "sensitest/isotonic.hpp"
#include "sensitest/mle.hpp"
#include "sensitest/rmj.hpp"
#include "sensitest/serialize.hpp"

namespace sensitest::service {

using json = nlohmann::json;
namespace fs = std::filesystem;

class NotFoundError : public Error {
public:
    using Error::Error;
};

/// The client's echo does not match the current sequence number.
class StaleEchoError : public StateError {
public:
    StaleEchoError(const std::string& msg, json current) : StateError(msg), current_(std::move(current)) {}
    const json& current() const noexcept { return current_; }

private:
    json current_;
};

/// Outcome posted to a session that is no longer active.
class SessionClosedError : public StateError {
public:
    SessionClosedError(const std::string& msg, json current) : StateError(msg), current_(std::move(current)) {}
    const json& current() const noexcept { return current_; }

private:
    json current_;
};

/// The session log on disk does not fold to a valid state.
class CorruptLogError : public Error {
public:
    using Error::Error;
};

enum class SessionStatus { active, terminated, abandoned };

inline std::string_view to_string(SessionStatus s) noexcept {
    switch (s) {
        case SessionStatus::active: return "active";
        case SessionStatus::terminated: return "terminated";
        case SessionStatus::abandoned: return "abandoned";
    }
    return "?";
}

inline std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
    char out[48];
    std::snprintf(out, sizeof out, "%s.%03dZ", buf, static_cast<int>(ms));
    return out;
}

struct SessionHeader {
    std::string id;
    std::string material;
    std::string unit = "N";
    std::string created_at;
    std::uint64_t seed = 0;
    double level = 0.9;
    DoseScale dose_scale = DoseScale::natural;
    DesignConfig design;
};

inline json header_to_json(const SessionHeader& h) {
    return {{"v", json_io::kRecordVersion},
            {"type", "created"},
            {"id", h.id},
            {"material", h.material},
            {"unit", h.unit},
            {"created_at", h.created_at},
            {"seed", h.seed},
            {"level", h.level},
            {"dose_scale", std::string(to_string(h.dose_scale))},
            {"design", json_io::design_to_json(h.design)}};
}

inline SessionHeader header_from_json(const json& j) {
    using json_io::optional_field;
    using json_io::required;
    SessionHeader h;
    h.id = required<std::string>(j, "id");
    h.material = optional_field<std::string>(j, "material", "");
    h.unit = optional_field<std::string>(j, "unit", "N");
    h.created_at = optional_field<std::string>(j, "created_at", "");
    h.seed = required<std::uint64_t>(j, "seed");
    h.level = optional_field<double>(j, "level", 0.9);
    h.dose_scale = parse_dose_scale(optional_field<std::string>(j, "dose_scale", "natural"));
    h.design = json_io::design_from_json(required<json>(j, "design"));
    return h;
}

/// CIR on the natural dose axis for additive steps, on log dose otherwise.
inline DoseScale default_dose_scale(const DesignConfig& c) {
    if (const auto* b = std::get_if<BcdConfig>(&c)) return b->scale == StepScale::linear ? DoseScale::natural : DoseScale::log;
    if (const auto* u = std::get_if<UpDownConfig>(&c))
        return u->scale == StepScale::linear ? DoseScale::natural : DoseScale::log;
    return DoseScale::log;
}

class Session {
public:
    Session(SessionHeader header, fs::path log_path)
        : header_(std::move(header)), path_(std::move(log_path)),
          state_(DesignState::start(header_.design, header_.seed)) {}

    const SessionHeader& header() const noexcept { return header_; }
    const DesignState& state() const noexcept { return state_; }
    const std::vector<json_io::TrialEvent>& events() const noexcept { return events_; }
    const fs::path& path() const noexcept { return path_; }
    std::mutex& mutex() noexcept { return mutex_; }

    SessionStatus status() const noexcept {
        if (abandoned_) return SessionStatus::abandoned;
        if (finished_ || state_.terminated()) return SessionStatus::terminated;
        return SessionStatus::active;
    }

    int seq() const noexcept { return static_cast<int>(state_.history().size()); }

    Dataset dataset() const { return Dataset(state_.history(), header_.unit); }

    /// Folds one log line into the state. Used both on load and after append.
    void apply(const json& event) {
        const auto type = json_io::required<std::string>(event, "type");
        if (type == "outcome") {
            if (status() != SessionStatus::active) throw CorruptLogError("outcome recorded after the session closed");
            auto e = json_io::trial_event_from_json(event);
            json_io::apply_trial_event(state_, e);
            events_.push_back(std::move(e));
        } else if (type == "abandoned") {
            abandoned_ = true;
        } else if (type == "finished") {
            finished_ = true;
        } else {
            throw CorruptLogError("unknown event type '" + type + "'");
        }
    }

    json snapshot() const {
        json j;
        j["id"] = header_.id;
        j["material"] = header_.material;
        j["unit"] = header_.unit;
        j["created_at"] = header_.created_at;
        j["design"] = json_io::design_to_json(header_.design);
        j["design_kind"] = std::string(to_string(state_.kind()));
        j["level"] = header_.level;
        j["dose_scale"] = std::string(to_string(header_.dose_scale));
        j["status"] = std::string(to_string(status()));
        j["seq"] = seq();
        if (status() == SessionStatus::active && state_.next_stimulus()) {
            json r{{"stimulus", *state_.next_stimulus()}, {"seq", seq()}};
            if (auto l = state_.next_label()) r["label"] = *l;
            j["recommendation"] = r;
        } else {
            j["recommendation"] = nullptr;
        }
        json hist = json::array();
        for (std::size_t i = 0; i < state_.history().size(); ++i) {
            json t = json_io::trial_to_json(state_.history()[i]);
            const auto& e = events_[i];
            if (e.note) t["note"] = *e.note;
            if (!e.timestamp.empty()) t["ts"] = e.timestamp;
            if (e.coin >= 0) t["coin"] = e.coin;
            hist.push_back(t);
        }
        j["history"] = hist;
        add_estimate(j);
        return j;
    }

    json summary() const {
        return {{"id", header_.id},
                {"material", header_.material},
                {"created_at", header_.created_at},
                {"design_kind", std::string(to_string(state_.kind()))},
                {"status", std::string(to_string(status()))},
                {"trials", seq()}};
    }

private:
    SessionHeader header_;
    fs::path path_;
    DesignState state_;
    std::vector<json_io::TrialEvent> events_;
    bool abandoned_ = false;
    bool finished_ = false;
    std::mutex mutex_;

    void add_estimate(json& j) const {
        j["estimate"] = nullptr;
        const auto& hist = state_.history();
        try {
            switch (state_.kind()) {
                case DesignKind::bcd: {
                    if (hist.empty()) {
                        j["estimate_note"] = "no trials yet";
                        break;
                    }
                    const double p = std::get<BcdConfig>(header_.design).p;
                    j["estimate"] = json_io::estimate_to_json(
                        cir_quantile(dataset(), p, header_.level, header_.dose_scale));
                    break;
                }
                case DesignKind::up_down: {
                    const auto fit = fit_probit_mle(dataset());
                    j["estimate"] = json_io::estimate_to_json(fieller_ci(fit, 0.5, header_.level));
                    break;
                }
                case DesignKind::rmj: {
                    j["estimate"] = json_io::estimate_to_json(rmj_running_estimate(state_, header_.level));
                    j["estimate_final"] = state_.terminated();
                    break;
                }
                case DesignKind::un_staircase: {
                    const auto& cfg = std::get<UnStaircaseConfig>(header_.design);
                    auto value = [](std::optional<double> v) { return v ? json(*v) : json(nullptr); };
                    json s;
                    s["limiting_type"] = std::string(to_string(cfg.limiting_type));
                    s["K"] = cfg.K;
                    s["consecutive_negatives"] = state_.consecutive_negatives();
                    s["initial_stage"] = state_.in_initial_stage();
                    s["floor_hit"] = state_.floor_hit();
                    // Would-be values if the run stopped at the current level.
                    s["type_I"] = value(state_.limiting_value(LimitingType::I));
                    s["type_II"] = state_.terminated() ? value(state_.limiting_value(LimitingType::II))
                                                       : value(state_.next_stimulus());
                    if (cfg.threshold) s["threshold"] = *cfg.threshold;
                    if (state_.terminated()) {
                        const auto r = state_.limiting_result();
                        s["result"] = value(r.value);
                        if (r.classification)
                            s["classification"] =
                                *r.classification == Classification::sensitive ? "sensitive" : "insensitive";
                    }
                    j["staircase"] = s;
                    break;
                }
            }
        } catch (const OutOfRangeError& e) {
            j["estimate_note"] = e.what();
            j["observed_rate_range"] = {e.low(), e.high()};
        } catch (const StatisticalError& e) {
            j["estimate_note"] = e.what();
        } catch (const DomainError& e) {
            j["estimate_note"] = e.what();
        }
    }
};

namespace detail {

inline void append_line(const fs::path& path, const std::string& line) {
    std::FILE* f = std::fopen(path.c_str(), "ab");
    if (!f) throw Error("cannot open session log '" + path.string() + "'");
    const std::string buf = line + "\n";
    const bool ok = std::fwrite(buf.data(), 1, buf.size(), f) == buf.size() && std::fflush(f) == 0 &&
                    ::fsync(::fileno(f)) == 0;
    std::fclose(f);
    if (!ok) throw Error("write to session log '" + path.string() + "' failed");
}

}  // namespace detail

/// Owns every session under a data directory.
class SessionStore {
public:
    explicit SessionStore(fs::path dir, std::uint64_t master_seed = 0) : dir_(std::move(dir)), seed_(master_seed) {
        fs::create_directories(dir_);
        for (const auto& entry : fs::directory_iterator(dir_)) {
            if (entry.path().extension() != ".jsonl") continue;
            try {
                auto s = load(entry.path());
                sessions_[s->header().id] = std::move(s);
            } catch (const std::exception& e) {
                load_errors_.push_back(entry.path().filename().string() + ": " + e.what());
            }
        }
    }

    const fs::path& directory() const noexcept { return dir_; }
    const std::vector<std::string>& load_errors() const noexcept { return load_errors_; }

    /// Folds a session log. An unparsable final line (a torn write) is cut off.
    static std::shared_ptr<Session> load(const fs::path& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw CorruptLogError("cannot read");
        std::vector<std::string> lines;
        std::vector<std::streamoff> ends;
        std::string line;
        std::streamoff offset = 0;
        while (std::getline(f, line)) {
            const bool complete = !f.eof();
            offset += static_cast<std::streamoff>(line.size()) + (complete ? 1 : 0);
            lines.push_back(line);
            ends.push_back(offset);
        }
        f.close();
        std::vector<json> events;
        std::streamoff good_end = 0;
        for (std::size_t i = 0; i < lines.size(); ++i) {
            if (lines[i].empty()) {
                good_end = ends[i];
                continue;
            }
            try {
                events.push_back(json::parse(lines[i]));
                good_end = ends[i];
            } catch (const json::parse_error&) {
                if (i + 1 != lines.size()) throw CorruptLogError("unparsable record at line " + std::to_string(i + 1));
                fs::resize_file(path, static_cast<std::uintmax_t>(good_end));
            }
        }
        if (events.empty() || json_io::optional_field<std::string>(events[0], "type", "") != "created")
            throw CorruptLogError("log does not start with a session header");
        auto s = std::make_shared<Session>(header_from_json(events[0]), path);
        try {
            for (std::size_t i = 1; i < events.size(); ++i) s->apply(events[i]);
        } catch (const Error& e) {
            throw CorruptLogError(std::string("replay failed: ") + e.what());
        }
        return s;
    }

    /// Body: {design: {...}, material?, unit?, level?, dose_scale?, id?}.
    json create(const json& body) {
        if (!body.is_object()) throw ConfigError("request body must be an object", "body");
        SessionHeader h;
        h.design = json_io::design_from_json(json_io::required<json>(body, "design"));
        h.material = json_io::optional_field<std::string>(body, "material", "");
        h.unit = json_io::optional_field<std::string>(body, "unit", "N");
        if (h.unit.empty() || h.unit.find_first_of(",\n\r") != std::string::npos)
            throw ConfigError("unit must be a non-empty plain token", "unit");
        h.level = json_io::optional_field<double>(body, "level", 0.9);
        if (!(h.level > 0.0 && h.level < 1.0)) throw ConfigError("level must lie in (0,1)", "level");
        h.dose_scale = body.contains("dose_scale")
                           ? parse_dose_scale(json_io::required<std::string>(body, "dose_scale"))
                           : default_dose_scale(h.design);
        h.created_at = utc_timestamp();

        std::unique_lock lock(map_mutex_);
        if (body.contains("id")) {
            h.id = json_io::required<std::string>(body, "id");
            if (!valid_id(h.id)) throw ConfigError("id may contain only letters, digits, '-' and '_'", "id");
            if (sessions_.count(h.id)) throw ConfigError("session '" + h.id + "' already exists", "id");
        } else {
            do {
                h.id = fresh_id();
            } while (sessions_.count(h.id));
        }
        h.seed = mix_seed(seed_, fnv1a(h.id));
        const fs::path path = dir_ / (h.id + ".jsonl");
        auto s = std::make_shared<Session>(h, path);
        detail::append_line(path, header_to_json(h).dump());
        sessions_[h.id] = s;
        std::lock_guard slock(s->mutex());
        return s->snapshot();
    }

    /// Body: {outcome: 0|1, echo: seq, note?, stimulus?}.
    json record(const std::string& id, const json& body) {
        auto s = find(id);
        std::lock_guard lock(s->mutex());
        if (!body.is_object()) throw ConfigError("request body must be an object", "body");
        if (!body.contains("outcome") || !body["outcome"].is_number_integer())
            throw ConfigError("outcome must be 0 or 1", "outcome");
        const int y = body["outcome"].get<int>();
        if (y != 0 && y != 1) throw ConfigError("outcome must be 0 or 1", "outcome");
        if (!body.contains("echo") || !body["echo"].is_number_integer())
            throw ConfigError("echo must be the sequence number of the recommendation", "echo");
        const int echo = body["echo"].get<int>();
        std::optional<std::string> note;
        if (body.contains("note") && !body["note"].is_null()) note = json_io::required<std::string>(body, "note");
        std::optional<double> stimulus;
        if (body.contains("stimulus") && !body["stimulus"].is_null()) {
            stimulus = json_io::required<double>(body, "stimulus");
            if (!(*stimulus > 0.0) || !std::isfinite(*stimulus))
                throw ConfigError("stimulus must be positive", "stimulus");
        }

        if (s->status() != SessionStatus::active)
            throw SessionClosedError("session is " + std::string(to_string(s->status())), s->snapshot());
        if (echo != s->seq())
            throw StaleEchoError("echo " + std::to_string(echo) + " does not match current sequence " +
                                     std::to_string(s->seq()),
                                 s->snapshot());

        DesignState next = s->state();
        try {
            next.observe(y, stimulus);
        } catch (const StateError& e) {
            throw ConfigError(e.what(), "stimulus");
        }
        auto event = json_io::last_trial_event(next, note);
        event.timestamp = utc_timestamp();
        const json line = json_io::trial_event_to_json(event);
        detail::append_line(s->path(), line.dump());
        s->apply(line);
        return s->snapshot();
    }

    /// Closes an active session: `finished` marks it terminated, `abandoned` abandoned.
    json close(const std::string& id, const std::string& how) {
        if (how != "finished" && how != "abandoned") throw ConfigError("close as 'finished' or 'abandoned'", "status");
        auto s = find(id);
        std::lock_guard lock(s->mutex());
        if (s->status() != SessionStatus::active)
            throw SessionClosedError("session is " + std::string(to_string(s->status())), s->snapshot());
        const json line{{"v", json_io::kRecordVersion}, {"type", how}, {"ts", utc_timestamp()}};
        detail::append_line(s->path(), line.dump());
        s->apply(line);
        return s->snapshot();
    }

    json snapshot(const std::string& id) {
        auto s = find(id);
        std::lock_guard lock(s->mutex());
        return s->snapshot();
    }

    json list() {
        std::vector<std::shared_ptr<Session>> all;
        {
            std::shared_lock lock(map_mutex_);
            for (auto& [_, s] : sessions_) all.push_back(s);
        }
        json out = json::array();
        for (auto& s : all) {
            std::lock_guard lock(s->mutex());
            out.push_back(s->summary());
        }
        return out;
    }

    /// `csv`: the trial dataset. `json`: the full snapshot.
    std::string export_session(const std::string& id, const std::string& format) {
        const auto fmt = json_io::parse_result_format(format);
        auto s = find(id);
        std::lock_guard lock(s->mutex());
        if (fmt == json_io::ResultFormat::delimited) return io::dataset_to_string(s->dataset());
        return s->snapshot().dump(2) + "\n";
    }

    std::shared_ptr<Session> find(const std::string& id) {
        std::shared_lock lock(map_mutex_);
        auto it = sessions_.find(id);
        if (it == sessions_.end()) throw NotFoundError("no session '" + id + "'");
        return it->second;
    }

private:
    fs::path dir_;
    std::uint64_t seed_;
    std::map<std::string, std::shared_ptr<Session>> sessions_;
    std::shared_mutex map_mutex_;
    std::vector<std::string> load_errors_;
    std::atomic<std::uint64_t> counter_{0};

    static bool valid_id(const std::string& id) {
        if (id.empty() || id.size() > 64) return false;
        for (char c : id)
            if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_') return false;
        return true;
    }

    std::string fresh_id() {
        const auto now = std::chrono::steady_clock::now().time_since_epoch().count();
        const std::uint64_t h = mix_seed(static_cast<std::uint64_t>(now) ^ seed_, counter_++);
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
        return std::string(buf, 12);
    }
};

/// Settings read from SENSITEST_DATA_DIR, SENSITEST_BIND and SENSITEST_SEED.
struct ServiceEnv {
    std::string data_dir = "sessions";
    std::string host = "127.0.0.1";
    int port = 8080;
    std::uint64_t seed = 0;

    static ServiceEnv from_environment() {
        ServiceEnv e;
        if (const char* v = std::getenv("SENSITEST_DATA_DIR"); v && *v) e.data_dir = v;
        if (const char* v = std::getenv("SENSITEST_BIND"); v && *v) e.set_bind(v);
        if (const char* v = std::getenv("SENSITEST_SEED"); v && *v) {
            try {
                e.seed = std::stoull(v);
            } catch (const std::exception&) {
                throw ConfigError("SENSITEST_SEED must be an unsigned integer", "SENSITEST_SEED");
            }
        }
        return e;
    }

    /// "host:port" or ":port".
    void set_bind(const std::string& bind) {
        const auto colon = bind.rfind(':');
        if (colon == std::string::npos) throw ConfigError("bind address must be host:port", "SENSITEST_BIND");
        if (colon > 0) host = bind.substr(0, colon);
        try {
            std::size_t used = 0;
            port = std::stoi(bind.substr(colon + 1), &used);
            if (used != bind.size() - colon - 1 || port < 0 || port > 65535) throw std::out_of_range("port");
        } catch (const std::exception&) {
            throw ConfigError("bad port in bind address '" + bind + "'", "SENSITEST_BIND");
        }
    }
};

}  // namespace sensitest::service
