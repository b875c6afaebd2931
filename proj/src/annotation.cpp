#include "arcade/annotation.hpp"

#include <algorithm>

#include <spdlog/spdlog.h>

#include "arcade/dataset.hpp"

namespace arcade {

using nlohmann::json;

std::string_view task_status_name(TaskStatus s) {
    switch (s) {
        case TaskStatus::Open: return "open";
        case TaskStatus::InProgress: return "in_progress";
        case TaskStatus::NeedsAdjudication: return "needs_adjudication";
        case TaskStatus::Done: return "done";
        case TaskStatus::Dropped: return "dropped";
    }
    return "?";
}

std::optional<TaskStatus> task_status_from_name(std::string_view s) {
    for (auto t : {TaskStatus::Open, TaskStatus::InProgress, TaskStatus::NeedsAdjudication, TaskStatus::Done,
                   TaskStatus::Dropped}) {
        if (task_status_name(t) == s) return t;
    }
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Roster

Roster::Roster(std::vector<AnnotatorAccount> accounts) : accounts_(std::move(accounts)) {
    std::set<std::string> ids, tokens;
    for (const auto& a : accounts_) {
        if (a.id.empty()) throw DataError("roster entry without id");
        if (!ids.insert(a.id).second) throw DataError("duplicate annotator id '" + a.id + "'");
        if (!a.token.empty() && !tokens.insert(a.token).second) throw DataError("duplicate roster token");
    }
}

Roster Roster::from_json(const json& j) {
    if (!j.is_array()) throw DataError("roster must be a list of accounts");
    std::vector<AnnotatorAccount> accounts;
    try {
        for (const auto& e : j) {
            AnnotatorAccount a;
            a.id = e.at("id").get<std::string>();
            a.display_name = e.value("name", a.id);
            a.is_expert = e.value("expert", false);
            a.token = e.value("token", std::string());
            accounts.push_back(std::move(a));
        }
    } catch (const json::exception& e) {
        throw DataError(std::string("bad roster: ") + e.what());
    }
    return Roster(std::move(accounts));
}

Roster Roster::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open roster " + path.string());
    try {
        return from_json(json::parse(in));
    } catch (const json::parse_error& e) {
        throw DataError("roster " + path.string() + ": " + e.what());
    }
}

const AnnotatorAccount* Roster::find(const std::string& id) const {
    auto it = std::find_if(accounts_.begin(), accounts_.end(), [&](const auto& a) { return a.id == id; });
    return it == accounts_.end() ? nullptr : &*it;
}

const AnnotatorAccount* Roster::find_by_token(const std::string& token) const {
    if (token.empty()) return nullptr;
    auto it = std::find_if(accounts_.begin(), accounts_.end(), [&](const auto& a) { return a.token == token; });
    return it == accounts_.end() ? nullptr : &*it;
}

// ---------------------------------------------------------------------------
// Task encoding

namespace {

json priors_json(const Priors& p) {
    return json{{"y_text", code_of(p.y_text)},
                {"e_text", p.e_text},
                {"y_image", code_of(p.y_image)},
                {"e_image", p.e_image}};
}

Priors priors_from(const json& j) {
    Priors p;
    p.y_text = category_from_json(j.at("y_text"), "priors.y_text");
    p.e_text = j.value("e_text", std::string());
    p.y_image = category_from_json(j.at("y_image"), "priors.y_image");
    p.e_image = j.value("e_image", std::string());
    return p;
}

json consensus_json(const ConsensusInfo& c) {
    return json{{"level", c.level},
                {"label", c.label ? json(code_of(*c.label)) : json(nullptr)},
                {"fine_label_pending", c.fine_label_pending}};
}

ConsensusInfo consensus_from(const json& j) {
    ConsensusInfo c;
    c.level = j.at("level").get<std::string>();
    if (const auto& l = j.at("label"); !l.is_null()) c.label = category_from_json(l, "consensus.label");
    c.fine_label_pending = j.value("fine_label_pending", false);
    return c;
}

json task_json(const AnnotationTask& t) {
    json sample = t.sample;
    sample.erase("annotators");
    sample.erase("consensus");
    json records = json::array();
    for (const auto& r : t.records) records.push_back(r);
    return json{{"sample", std::move(sample)},
                {"priors", t.priors ? priors_json(*t.priors) : json(nullptr)},
                {"status", task_status_name(t.status)},
                {"records", std::move(records)},
                {"claims", t.claims},
                {"consensus", t.consensus ? consensus_json(*t.consensus) : json(nullptr)},
                {"version", t.version}};
}

AnnotationTask task_from(const json& j) {
    AnnotationTask t;
    t.sample = j.at("sample").get<Sample>();
    if (const auto& p = j.at("priors"); !p.is_null()) t.priors = priors_from(p);
    auto status = task_status_from_name(j.at("status").get<std::string>());
    if (!status) throw DataError("unknown task status");
    t.status = *status;
    for (const auto& r : j.at("records")) t.records.push_back(r.get<AnnotatorRecord>());
    t.claims = j.at("claims").get<std::set<std::string>>();
    if (const auto& c = j.at("consensus"); !c.is_null()) t.consensus = consensus_from(c);
    t.version = j.at("version").get<std::uint64_t>();
    return t;
}

HateCategory effective_label(const AnnotatorRecord& r) {
    return r.adjudication ? r.adjudication->label : r.label;
}

bool unresolved_flag(const AnnotatorRecord& r) { return !r.adjudication && (r.not_sure || r.low_quality); }

}  // namespace

bool AnnotationTask::has_record_from(const std::string& annotator) const {
    return std::any_of(records.begin(), records.end(), [&](const auto& r) { return r.annotator_id == annotator; });
}

json task_view(const AnnotationTask& t) {
    json j{{"id", t.id()},
           {"text", t.sample.text},
           {"image", t.sample.image_ref},
           {"status", task_status_name(t.status)},
           {"version", t.version},
           {"record_count", t.records.size()},
           {"priors", t.priors ? priors_json(*t.priors) : json(nullptr)}};
    if (t.status == TaskStatus::Done) {
        json records = json::array();
        for (const auto& r : t.records) records.push_back(r);
        j["records"] = std::move(records);
        j["consensus"] = t.consensus ? consensus_json(*t.consensus) : json(nullptr);
    }
    return j;
}

TaskStatus classify_records(const std::vector<AnnotatorRecord>& records, std::optional<ConsensusInfo>* consensus) {
    if (consensus) consensus->reset();
    if (records.size() < kAnnotatorsPerTask) {
        return records.empty() ? TaskStatus::Open : TaskStatus::InProgress;
    }
    const auto low = std::count_if(records.begin(), records.end(),
                                   [](const auto& r) { return !r.adjudication && r.low_quality; });
    if (low * 2 > static_cast<long>(records.size())) return TaskStatus::Dropped;
    if (std::any_of(records.begin(), records.end(), unresolved_flag)) return TaskStatus::NeedsAdjudication;

    const LabelTriple labels{effective_label(records[0]), effective_label(records[1]), effective_label(records[2])};
    const ConsensusLevel level = consensus_level(labels);
    ConsensusInfo info;
    info.level = std::string(consensus_name(level));
    info.label = majority_label(labels);
    TaskStatus status = TaskStatus::Done;
    if (level == ConsensusLevel::NoConsensus) {
        status = TaskStatus::Dropped;
    } else if (level == ConsensusLevel::Strong && !info.label) {
        info.fine_label_pending = true;
        status = TaskStatus::NeedsAdjudication;
    }
    if (consensus) *consensus = std::move(info);
    return status;
}

json to_json(const Progress& p) {
    json counts = json::object();
    for (auto s : {TaskStatus::Open, TaskStatus::InProgress, TaskStatus::NeedsAdjudication, TaskStatus::Done,
                   TaskStatus::Dropped}) {
        auto it = p.counts.find(s);
        counts[std::string(task_status_name(s))] = it == p.counts.end() ? 0 : it->second;
    }
    return json{{"counts", counts}, {"total", p.total}, {"kappa", p.kappa ? json(*p.kappa) : json(nullptr)}};
}

// ---------------------------------------------------------------------------
// Store

AnnotationStore::AnnotationStore(Roster roster) : roster_(std::move(roster)) {}

AnnotationStore::AnnotationStore(Roster roster, std::filesystem::path data_dir)
    : roster_(std::move(roster)), data_dir_(std::move(data_dir)) {
    std::filesystem::create_directories(*data_dir_);
    load_persistent();
    log_.open(*data_dir_ / "events.jsonl", std::ios::app);
    if (!log_) throw DataError("cannot open event log in " + data_dir_->string());
}

AnnotationStore::~AnnotationStore() = default;

void AnnotationStore::load_persistent() {
    const auto snap_path = *data_dir_ / "snapshot.json";
    std::uint64_t snap_seq = 0;
    if (std::filesystem::exists(snap_path)) {
        std::ifstream in(snap_path);
        try {
            const json snap = json::parse(in);
            snap_seq = snap.at("seq").get<std::uint64_t>();
            for (const auto& tj : snap.at("tasks")) {
                auto slot = std::make_unique<Slot>();
                slot->task = task_from(tj);
                const std::string id = slot->task.id();
                tasks_.emplace(id, std::move(slot));
            }
        } catch (const json::exception& e) {
            throw DataError("bad snapshot " + snap_path.string() + ": " + e.what());
        }
    }
    seq_ = snap_seq;
    const auto log_path = *data_dir_ / "events.jsonl";
    if (!std::filesystem::exists(log_path)) return;
    std::ifstream in(log_path);
    std::string line;
    int applied = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json ev;
        try {
            ev = json::parse(line);
        } catch (const json::parse_error&) {
            // A torn final line from a crash mid-append.
            spdlog::warn("annotation log: skipping unparsable line");
            continue;
        }
        const auto seq = ev.at("seq").get<std::uint64_t>();
        if (seq <= snap_seq) continue;
        apply(ev, false);
        events_.push_back(ev);
        seq_ = std::max(seq_, seq);
        ++applied;
    }
    spdlog::info("annotation store: {} tasks, {} events replayed", tasks_.size(), applied);
}

void AnnotationStore::append_event(json event) {
    std::lock_guard lock(log_mu_);
    event["seq"] = ++seq_;
    if (log_.is_open()) {
        log_ << event.dump() << '\n';
        log_.flush();
    }
    events_.push_back(std::move(event));
}

AnnotationStore::Slot& AnnotationStore::slot(const std::string& task_id) const {
    std::shared_lock lock(tasks_mu_);
    auto it = tasks_.find(task_id);
    if (it == tasks_.end()) throw AnnotationError(AnnotationError::Code::NotFound, "unknown task '" + task_id + "'");
    return *it->second;
}

void AnnotationStore::import_tasks(std::vector<AnnotationTask> tasks) {
    {
        std::shared_lock lock(tasks_mu_);
        std::set<std::string> ids;
        for (const auto& t : tasks) {
            if (tasks_.count(t.id()) || !ids.insert(t.id()).second) {
                throw AnnotationError(AnnotationError::Code::Conflict, "task '" + t.id() + "' already exists");
            }
        }
    }
    json list = json::array();
    for (const auto& t : tasks) list.push_back(task_json(t));
    apply(json{{"type", "import"}, {"tasks", list}}, true);
}

std::vector<AnnotationTask> AnnotationStore::read_task_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open task file " + path.string());
    std::vector<AnnotationTask> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const json j = json::parse(line);
            AnnotationTask t;
            t.sample = parse_sample_line(line);
            t.sample.annotators.clear();
            t.sample.consensus.reset();
            if (auto p = j.find("priors"); p != j.end() && !p->is_null()) t.priors = priors_from(*p);
            out.push_back(std::move(t));
        } catch (const std::exception& e) {
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

void AnnotationStore::apply(const json& ev, bool log) {
    const std::string type = ev.at("type").get<std::string>();
    if (type == "import") {
        std::unique_lock lock(tasks_mu_);
        for (const auto& tj : ev.at("tasks")) {
            auto slot = std::make_unique<Slot>();
            slot->task = task_from(tj);
            const std::string id = slot->task.id();
            tasks_[id] = std::move(slot);
        }
        lock.unlock();
        if (log) append_event(ev);
    } else if (type == "claim") {
        do_claim(ev.at("annotator").get<std::string>(), ev.at("task").get<std::string>(), log);
    } else if (type == "submit") {
        do_submit(ev.at("annotator").get<std::string>(), ev.at("task").get<std::string>(),
                  ev.at("record").get<AnnotatorRecord>(), std::nullopt, log);
    } else if (type == "adjudicate") {
        std::optional<std::string> replaces;
        if (auto r = ev.find("replaces"); r != ev.end() && !r->is_null()) replaces = r->get<std::string>();
        do_adjudicate(ev.at("expert").get<std::string>(), ev.at("task").get<std::string>(),
                      category_from_json(ev.at("label"), "label"), replaces, log);
    } else {
        throw DataError("unknown event type '" + type + "'");
    }
}

std::optional<AnnotationTask> AnnotationStore::do_claim(const std::string& annotator_id, const std::string& task_id,
                                                        bool log) {
    Slot& s = slot(task_id);
    std::lock_guard lock(s.mu);
    AnnotationTask& t = s.task;
    if (t.claims.count(annotator_id)) return t;
    if (t.status != TaskStatus::Open && t.status != TaskStatus::InProgress) return std::nullopt;
    if (t.has_record_from(annotator_id)) return std::nullopt;
    if (t.records.size() + t.claims.size() >= kAnnotatorsPerTask) return std::nullopt;
    t.claims.insert(annotator_id);
    t.status = TaskStatus::InProgress;
    t.version += 1;
    if (log) append_event(json{{"type", "claim"}, {"annotator", annotator_id}, {"task", task_id}});
    return t;
}

std::optional<AnnotationTask> AnnotationStore::next_task(const std::string& annotator_id) {
    if (!roster_.find(annotator_id)) {
        throw AnnotationError(AnnotationError::Code::NotFound, "unknown annotator '" + annotator_id + "'");
    }
    std::vector<std::string> ids;
    {
        std::shared_lock lock(tasks_mu_);
        for (const auto& [id, slot] : tasks_) {
            std::lock_guard task_lock(slot->mu);
            // An existing claim is handed back before anything new is claimed.
            if (slot->task.claims.count(annotator_id)) return slot->task;
            ids.push_back(id);
        }
    }
    for (const auto& id : ids) {
        if (auto t = do_claim(annotator_id, id, true)) return t;
    }
    return std::nullopt;
}

AnnotationTask AnnotationStore::submit(const std::string& annotator_id, const std::string& task_id,
                                       AnnotatorRecord record, std::optional<std::uint64_t> expected_version) {
    if (!roster_.find(annotator_id)) {
        throw AnnotationError(AnnotationError::Code::Forbidden, "unknown annotator '" + annotator_id + "'");
    }
    return do_submit(annotator_id, task_id, std::move(record), expected_version, true);
}

AnnotationTask AnnotationStore::do_submit(const std::string& annotator_id, const std::string& task_id,
                                          AnnotatorRecord record, std::optional<std::uint64_t> expected_version,
                                          bool log) {
    using Code = AnnotationError::Code;
    Slot& s = slot(task_id);
    std::lock_guard lock(s.mu);
    AnnotationTask& t = s.task;
    if (expected_version && *expected_version != t.version) {
        throw AnnotationError(Code::Conflict, "task '" + task_id + "' changed (version " + std::to_string(t.version) +
                                                  ")");
    }
    if (t.has_record_from(annotator_id)) {
        throw AnnotationError(Code::Conflict, "annotator already submitted for task '" + task_id + "'");
    }
    if (t.status != TaskStatus::Open && t.status != TaskStatus::InProgress) {
        throw AnnotationError(Code::Conflict,
                              "task '" + task_id + "' is " + std::string(task_status_name(t.status)));
    }
    if (!t.claims.count(annotator_id)) {
        throw AnnotationError(Code::Conflict, "task '" + task_id + "' is not assigned to '" + annotator_id + "'");
    }
    if (record.adjudication) throw AnnotationError(Code::Invalid, "regular records cannot carry an adjudication");
    record.annotator_id = annotator_id;
    t.claims.erase(annotator_id);
    t.records.push_back(record);
    t.status = classify_records(t.records, &t.consensus);
    t.version += 1;
    if (log) {
        append_event(json{{"type", "submit"}, {"annotator", annotator_id}, {"task", task_id}, {"record", record}});
    }
    return t;
}

AnnotationTask AnnotationStore::adjudicate(const std::string& expert_id, const std::string& task_id,
                                           HateCategory label, const std::optional<std::string>& replaces) {
    const AnnotatorAccount* acct = roster_.find(expert_id);
    if (!acct || !acct->is_expert) {
        throw AnnotationError(AnnotationError::Code::Forbidden, "'" + expert_id + "' is not an expert");
    }
    return do_adjudicate(expert_id, task_id, label, replaces, true);
}

AnnotationTask AnnotationStore::do_adjudicate(const std::string& expert_id, const std::string& task_id,
                                              HateCategory label, const std::optional<std::string>& replaces,
                                              bool log) {
    using Code = AnnotationError::Code;
    Slot& s = slot(task_id);
    std::lock_guard lock(s.mu);
    AnnotationTask& t = s.task;
    if (t.status != TaskStatus::NeedsAdjudication) {
        throw AnnotationError(Code::Conflict,
                              "task '" + task_id + "' is " + std::string(task_status_name(t.status)));
    }
    auto target = t.records.end();
    if (replaces) {
        target = std::find_if(t.records.begin(), t.records.end(),
                              [&](const auto& r) { return r.annotator_id == *replaces; });
        if (target == t.records.end()) {
            throw AnnotationError(Code::NotFound, "no record from '" + *replaces + "' on task '" + task_id + "'");
        }
    } else {
        target = std::find_if(t.records.begin(), t.records.end(), unresolved_flag);
        if (target == t.records.end()) {
            throw AnnotationError(Code::Invalid, "no flagged record; name the record to replace");
        }
    }
    target->low_quality = false;
    target->not_sure = true;
    target->adjudication = Adjudication{expert_id, label};
    t.status = classify_records(t.records, &t.consensus);
    t.version += 1;
    if (log) {
        append_event(json{{"type", "adjudicate"},
                          {"expert", expert_id},
                          {"task", task_id},
                          {"label", code_of(label)},
                          {"replaces", replaces ? json(*replaces) : json(nullptr)}});
    }
    return t;
}

std::optional<AnnotationTask> AnnotationStore::get(const std::string& task_id) const {
    std::shared_lock lock(tasks_mu_);
    auto it = tasks_.find(task_id);
    if (it == tasks_.end()) return std::nullopt;
    std::lock_guard task_lock(it->second->mu);
    return it->second->task;
}

std::vector<AnnotationTask> AnnotationStore::tasks() const {
    std::shared_lock lock(tasks_mu_);
    std::vector<AnnotationTask> out;
    out.reserve(tasks_.size());
    for (const auto& [_, slot] : tasks_) {
        std::lock_guard task_lock(slot->mu);
        out.push_back(slot->task);
    }
    return out;
}

Progress AnnotationStore::progress() const {
    Progress p;
    std::vector<LabelTriple> done;
    for (const auto& t : tasks()) {
        p.counts[t.status] += 1;
        p.total += 1;
        if (t.status == TaskStatus::Done && t.records.size() == kAnnotatorsPerTask) {
            done.push_back({effective_label(t.records[0]), effective_label(t.records[1]),
                            effective_label(t.records[2])});
        }
    }
    if (!done.empty()) p.kappa = fleiss_kappa(rating_matrix(done));
    return p;
}

void AnnotationStore::snapshot() {
    if (!data_dir_) return;
    // Lock order matches the write paths: every task, then the log.
    std::unique_lock tasks_lock(tasks_mu_);
    std::vector<std::unique_lock<std::mutex>> task_locks;
    json list = json::array();
    for (const auto& [_, slot] : tasks_) {
        task_locks.emplace_back(slot->mu);
        list.push_back(task_json(slot->task));
    }
    std::lock_guard log_lock(log_mu_);
    const auto tmp = *data_dir_ / "snapshot.json.tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        out << json{{"seq", seq_}, {"tasks", list}}.dump() << '\n';
        if (!out) throw DataError("cannot write snapshot in " + data_dir_->string());
    }
    std::filesystem::rename(tmp, *data_dir_ / "snapshot.json");
    log_.close();
    log_.open(*data_dir_ / "events.jsonl", std::ios::trunc);
}

std::vector<json> AnnotationStore::events() const {
    std::lock_guard lock(log_mu_);
    return events_;
}

std::unique_ptr<AnnotationStore> AnnotationStore::replay(Roster roster, const std::vector<json>& events) {
    auto store = std::make_unique<AnnotationStore>(std::move(roster));
    for (const auto& ev : events) store->apply(ev, true);
    return store;
}

std::vector<Sample> AnnotationStore::export_samples() const {
    std::vector<Sample> out;
    for (const auto& t : tasks()) {
        if (t.records.size() != kAnnotatorsPerTask) continue;
        Sample s = t.sample;
        s.annotators = t.records;
        s.consensus = t.consensus;
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace arcade
