#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "arcade/core.hpp"
#include "arcade/datakit.hpp"

namespace arcade {

enum class TaskStatus { Open, InProgress, NeedsAdjudication, Done, Dropped };

std::string_view task_status_name(TaskStatus s);
std::optional<TaskStatus> task_status_from_name(std::string_view s);

/// Unimodal model-assisted reference shown next to the pair.
struct Priors {
    HateCategory y_text = HateCategory::NotHate;
    std::string e_text;
    HateCategory y_image = HateCategory::NotHate;
    std::string e_image;
    bool operator==(const Priors&) const = default;
};

struct AnnotatorAccount {
    std::string id;
    std::string display_name;
    bool is_expert = false;
    std::string token;
};

class Roster {
public:
    Roster() = default;
    explicit Roster(std::vector<AnnotatorAccount> accounts);

    /// JSON array of {"id", "name", "expert", "token"}.
    static Roster from_json(const nlohmann::json& j);
    static Roster load(const std::filesystem::path& path);

    const AnnotatorAccount* find(const std::string& id) const;
    const AnnotatorAccount* find_by_token(const std::string& token) const;
    std::size_t size() const { return accounts_.size(); }

private:
    std::vector<AnnotatorAccount> accounts_;
};

inline constexpr std::size_t kAnnotatorsPerTask = 3;

struct AnnotationTask {
    Sample sample;
    std::optional<Priors> priors;
    TaskStatus status = TaskStatus::Open;
    /// Regular records in submission order; adjudicated ones carry `adjudication`.
    std::vector<AnnotatorRecord> records;
    /// Annotators holding an open claim.
    std::set<std::string> claims;
    std::optional<ConsensusInfo> consensus;
    std::uint64_t version = 0;

    const std::string& id() const { return sample.id; }
    bool has_record_from(const std::string& annotator) const;
    bool operator==(const AnnotationTask&) const = default;
};

/// Public view of a task; labels stay hidden until the task is done.
nlohmann::json task_view(const AnnotationTask& t);

class AnnotationError : public std::runtime_error {
public:
    enum class Code { NotFound, Forbidden, Conflict, Invalid };
    AnnotationError(Code code, const std::string& what) : std::runtime_error(what), code_(code) {}
    Code code() const { return code_; }

private:
    Code code_;
};

/// Status reached by a full triple of records.
TaskStatus classify_records(const std::vector<AnnotatorRecord>& records, std::optional<ConsensusInfo>* consensus);

struct Progress {
    std::map<TaskStatus, int> counts;
    int total = 0;
    /// Fleiss kappa over the effective labels of done tasks.
    std::optional<double> kappa;
};

nlohmann::json to_json(const Progress& p);

/// Task store with an append-only event log. Operations on one task are serialized; the
/// log has a single writer.
class AnnotationStore {
public:
    /// In-memory store.
    explicit AnnotationStore(Roster roster);
    /// Persistent store: replays `data_dir/events.jsonl` on top of `data_dir/snapshot.json`.
    AnnotationStore(Roster roster, std::filesystem::path data_dir);
    ~AnnotationStore();

    AnnotationStore(const AnnotationStore&) = delete;
    AnnotationStore& operator=(const AnnotationStore&) = delete;

    /// Adds tasks; ids must be new. Lines are dataset samples with an optional "priors" object.
    void import_tasks(std::vector<AnnotationTask> tasks);
    static std::vector<AnnotationTask> read_task_file(const std::filesystem::path& path);

    /// Claims the first open task (by id) this annotator has not labeled and that has room.
    std::optional<AnnotationTask> next_task(const std::string& annotator_id);
    /// `expected_version`, when given, must match the current task version.
    AnnotationTask submit(const std::string& annotator_id, const std::string& task_id, AnnotatorRecord record,
                          std::optional<std::uint64_t> expected_version = std::nullopt);
    /// Replaces `replaces` (an annotator id) or else the first flagged record.
    AnnotationTask adjudicate(const std::string& expert_id, const std::string& task_id, HateCategory label,
                              const std::optional<std::string>& replaces = std::nullopt);

    std::optional<AnnotationTask> get(const std::string& task_id) const;
    std::vector<AnnotationTask> tasks() const;
    Progress progress() const;
    const Roster& roster() const { return roster_; }

    /// Writes snapshot.json and truncates the event log.
    void snapshot();
    std::vector<nlohmann::json> events() const;

    /// Rebuilds a store from a roster and an event sequence.
    static std::unique_ptr<AnnotationStore> replay(Roster roster, const std::vector<nlohmann::json>& events);

    /// Curated samples: every task with a full record set, annotators attached.
    std::vector<Sample> export_samples() const;

private:
    struct Slot {
        mutable std::mutex mu;
        AnnotationTask task;
    };

    Slot& slot(const std::string& task_id) const;
    void apply(const nlohmann::json& event, bool log);
    void append_event(nlohmann::json event);
    void load_persistent();
    AnnotationTask do_submit(const std::string& annotator_id, const std::string& task_id, AnnotatorRecord record,
                             std::optional<std::uint64_t> expected_version, bool log);
    AnnotationTask do_adjudicate(const std::string& expert_id, const std::string& task_id, HateCategory label,
                                 const std::optional<std::string>& replaces, bool log);
    std::optional<AnnotationTask> do_claim(const std::string& annotator_id, const std::string& task_id, bool log);

    Roster roster_;
    std::optional<std::filesystem::path> data_dir_;

    mutable std::shared_mutex tasks_mu_;
    std::map<std::string, std::unique_ptr<Slot>> tasks_;

    mutable std::mutex log_mu_;
    std::vector<nlohmann::json> events_;
    std::uint64_t seq_ = 0;
    std::ofstream log_;
};

}  // namespace arcade
