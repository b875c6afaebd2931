#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <thread>

#include <httplib.h>

#include "arcade/annotation.hpp"
#include "arcade/annotation_server.hpp"
#include "arcade/dataset.hpp"

namespace arcade {
namespace {

using nlohmann::json;
using Code = AnnotationError::Code;

Roster roster() {
    return Roster::from_json(json::parse(R"([
        {"id": "a1", "name": "Ann One", "token": "t-a1"},
        {"id": "a2", "name": "Ann Two", "token": "t-a2"},
        {"id": "a3", "name": "Ann Three", "token": "t-a3"},
        {"id": "a4", "name": "Ann Four", "token": "t-a4"},
        {"id": "e1", "name": "Expert", "expert": true, "token": "t-e1"}])"));
}

std::vector<AnnotationTask> make_tasks(int n) {
    std::vector<AnnotationTask> out;
    for (int i = 0; i < n; ++i) {
        AnnotationTask t;
        t.sample.id = "t" + std::to_string(i);
        t.sample.text = "text " + std::to_string(i);
        t.sample.image_ref = "img/" + t.sample.id + ".png";
        t.priors = Priors{HateCategory::NotHate, "benign text", HateCategory::Racist, "caricature"};
        out.push_back(std::move(t));
    }
    return out;
}

AnnotatorRecord label(int code, bool low = false, bool unsure = false) {
    AnnotatorRecord r;
    r.label = *category_from_code(code);
    r.low_quality = low;
    r.not_sure = unsure;
    return r;
}

// Claims `task` for each annotator in turn and submits the matching record.
AnnotationTask fill(AnnotationStore& store, const std::string& task, const std::vector<AnnotatorRecord>& recs) {
    AnnotationTask last;
    const char* who[] = {"a1", "a2", "a3"};
    for (std::size_t i = 0; i < recs.size(); ++i) {
        auto t = store.next_task(who[i]);
        EXPECT_TRUE(t.has_value());
        EXPECT_EQ(t->id(), task);
        last = store.submit(who[i], task, recs[i]);
    }
    return last;
}

void expect_code(Code code, const std::function<void()>& fn) {
    try {
        fn();
        ADD_FAILURE() << "expected AnnotationError";
    } catch (const AnnotationError& e) {
        EXPECT_EQ(e.code(), code) << e.what();
    }
}

TEST(Roster, Lookup) {
    const Roster r = roster();
    EXPECT_EQ(r.size(), 5u);
    EXPECT_TRUE(r.find("e1")->is_expert);
    EXPECT_EQ(r.find_by_token("t-a2")->id, "a2");
    EXPECT_EQ(r.find_by_token(""), nullptr);
    EXPECT_EQ(r.find("zz"), nullptr);
    EXPECT_THROW(Roster::from_json(json::parse(R"([{"id": "x", "token": "t"}, {"id": "x", "token": "u"}])")), DataError);
}

TEST(Classify, StatusRules) {
    std::optional<ConsensusInfo> c;
    EXPECT_EQ(classify_records({}, &c), TaskStatus::Open);
    EXPECT_EQ(classify_records({label(1)}, &c), TaskStatus::InProgress);
    EXPECT_EQ(classify_records({label(1), label(1), label(1)}, &c), TaskStatus::Done);
    EXPECT_EQ(c->level, "perfect");
    EXPECT_EQ(classify_records({label(0), label(0), label(3)}, &c), TaskStatus::Done);
    EXPECT_EQ(c->label, HateCategory::NotHate);
    EXPECT_EQ(classify_records({label(1), label(2), label(3)}, &c), TaskStatus::NeedsAdjudication);
    EXPECT_TRUE(c->fine_label_pending);
    EXPECT_EQ(classify_records({label(0), label(1), label(2)}, &c), TaskStatus::Dropped);
    EXPECT_EQ(classify_records({label(1, true), label(1, true), label(1)}, &c), TaskStatus::Dropped);
    EXPECT_EQ(classify_records({label(1, true), label(1), label(1)}, &c), TaskStatus::NeedsAdjudication);
    EXPECT_EQ(classify_records({label(1, false, true), label(1), label(1)}, &c), TaskStatus::NeedsAdjudication);
}

TEST(Store, ClaimAssignsThreePerTask) {
    AnnotationStore store(roster());
    store.import_tasks(make_tasks(2));
    EXPECT_EQ(store.next_task("a1")->id(), "t0");
    EXPECT_EQ(store.next_task("a1")->id(), "t0");  // existing claim handed back
    EXPECT_EQ(store.next_task("a2")->id(), "t0");
    EXPECT_EQ(store.next_task("a3")->id(), "t0");
    EXPECT_EQ(store.next_task("a4")->id(), "t1");
    store.submit("a1", "t0", label(2));
    // a1 has labeled t0, so it moves on.
    EXPECT_EQ(store.next_task("a1")->id(), "t1");
    expect_code(Code::NotFound, [&] { store.next_task("nobody"); });
}

TEST(Store, PerfectAgreementCompletes) {
    AnnotationStore store(roster());
    store.import_tasks(make_tasks(1));
    const auto t = fill(store, "t0", {label(4), label(4), label(4)});
    EXPECT_EQ(t.status, TaskStatus::Done);
    EXPECT_EQ(t.consensus->label, HateCategory::ReligiousHate);
    EXPECT_FALSE(store.next_task("a4").has_value());
}

TEST(Store, SubmitGuards) {
    AnnotationStore store(roster());
    store.import_tasks(make_tasks(1));
    expect_code(Code::Conflict, [&] { store.submit("a1", "t0", label(1)); });  // no claim
    const auto claimed = store.next_task("a1");
    expect_code(Code::Conflict, [&] { store.submit("a1", "t0", label(1), claimed->version + 5); });
    store.submit("a1", "t0", label(1), claimed->version);
    expect_code(Code::Conflict, [&] { store.submit("a1", "t0", label(1)); });
    expect_code(Code::NotFound, [&] { store.submit("a1", "missing", label(1)); });
    expect_code(Code::Forbidden, [&] { store.submit("ghost", "t0", label(1)); });
    store.next_task("a2");
    AnnotatorRecord sneaky = label(1);
    sneaky.adjudication = Adjudication{"a2", HateCategory::Racist};
    expect_code(Code::Invalid, [&] { store.submit("a2", "t0", sneaky); });
    expect_code(Code::Conflict, [&] { store.import_tasks(make_tasks(1)); });
}

TEST(Store, NotSureGoesToExpert) {
    AnnotationStore store(roster());
    store.import_tasks(make_tasks(1));
    auto t = fill(store, "t0", {label(3), label(3), label(0, false, true)});
    EXPECT_EQ(t.status, TaskStatus::NeedsAdjudication);
    expect_code(Code::Forbidden, [&] { store.adjudicate("a4", "t0", HateCategory::Homophobic); });
    t = store.adjudicate("e1", "t0", HateCategory::Homophobic);
    EXPECT_EQ(t.status, TaskStatus::Done);
    EXPECT_EQ(t.consensus->level, "perfect");
    ASSERT_TRUE(t.records[2].adjudication);
    EXPECT_EQ(t.records[2].adjudication->expert_id, "e1");
    EXPECT_TRUE(t.records[2].not_sure);
    expect_code(Code::Conflict, [&] { store.adjudicate("e1", "t0", HateCategory::Racist); });
}

TEST(Store, StrongWithoutMajorityNeedsNamedReplacement) {
    AnnotationStore store(roster());
    store.import_tasks(make_tasks(1));
    auto t = fill(store, "t0", {label(1), label(2), label(5)});
    EXPECT_EQ(t.status, TaskStatus::NeedsAdjudication);
    EXPECT_TRUE(t.consensus->fine_label_pending);
    expect_code(Code::Invalid, [&] { store.adjudicate("e1", "t0", HateCategory::Sexist); });
    expect_code(Code::NotFound, [&] { store.adjudicate("e1", "t0", HateCategory::Sexist, "a4"); });
    t = store.adjudicate("e1", "t0", HateCategory::Sexist, "a1");
    EXPECT_EQ(t.status, TaskStatus::Done);
    EXPECT_EQ(t.consensus->label, HateCategory::Sexist);
    EXPECT_FALSE(t.consensus->fine_label_pending);
}

TEST(Store, DropsAndViews) {
    AnnotationStore store(roster());
    store.import_tasks(make_tasks(2));
    const auto dropped = fill(store, "t0", {label(0), label(1), label(2)});
    EXPECT_EQ(dropped.status, TaskStatus::Dropped);

    const auto open = store.get("t1");
    const json view = task_view(*open);
    EXPECT_FALSE(view.contains("records"));
    EXPECT_EQ(view["status"], "open");
    EXPECT_EQ(view["priors"]["y_image"], 1);
    auto done = fill(store, "t1", {label(2), label(2), label(2)});
    const json done_view = task_view(done);
    ASSERT_TRUE(done_view.contains("records"));
    EXPECT_EQ(done_view["records"].size(), 3u);
    EXPECT_EQ(done_view["consensus"]["label"], 2);
}

TEST(Store, ProgressKappaMatchesHandValue) {
    AnnotationStore store(roster());
    store.import_tasks(make_tasks(6));
    fill(store, "t0", {label(1), label(1), label(1)});
    fill(store, "t1", {label(0), label(0), label(2)});
    fill(store, "t2", {label(0), label(1), label(1)});
    fill(store, "t3", {label(2), label(2), label(2)});
    fill(store, "t4", {label(0), label(1), label(2)});  // dropped
    fill(store, "t5", {label(1), label(3), label(4)});  // pending expert
    const Progress p = store.progress();
    EXPECT_EQ(p.total, 6);
    EXPECT_EQ(p.counts.at(TaskStatus::Done), 4);
    EXPECT_EQ(p.counts.at(TaskStatus::Dropped), 1);
    EXPECT_EQ(p.counts.at(TaskStatus::NeedsAdjudication), 1);
    // Done items: P = (1 + 1/3 + 1/3 + 1) / 4 = 2/3; category shares 3/12, 5/12, 4/12 -> P_e = 25/72.
    ASSERT_TRUE(p.kappa);
    EXPECT_NEAR(*p.kappa, 23.0 / 47.0, 1e-12);
    const json j = to_json(p);
    EXPECT_EQ(j["counts"]["done"], 4);
    EXPECT_EQ(j["counts"]["open"], 0);
}

TEST(Store, ReplayReproducesState) {
    AnnotationStore store(roster());
    store.import_tasks(make_tasks(3));
    fill(store, "t0", {label(3), label(3), label(0, false, true)});
    store.adjudicate("e1", "t0", HateCategory::Homophobic);
    store.next_task("a4");
    store.submit("a4", "t1", label(1, true));
    const auto copy = AnnotationStore::replay(roster(), store.events());
    EXPECT_EQ(copy->tasks(), store.tasks());
    EXPECT_EQ(copy->events().size(), store.events().size());
}

TEST(Store, ExportFeedsFilter) {
    AnnotationStore store(roster());
    store.import_tasks(make_tasks(3));
    fill(store, "t0", {label(3), label(3), label(0, false, true)});
    store.adjudicate("e1", "t0", HateCategory::Homophobic);
    fill(store, "t1", {label(0), label(0), label(5)});
    store.next_task("a1");
    const auto samples = store.export_samples();
    ASSERT_EQ(samples.size(), 2u);
    const auto r = filter_pipeline(samples);
    EXPECT_EQ(r.report.kept, 2);
    EXPECT_EQ(r.report.perfect, 1);
    EXPECT_EQ(r.report.weak, 1);
}

TEST(Store, ConcurrentAnnotatorsNeverOverfill) {
    AnnotationStore store(roster());
    store.import_tasks(make_tasks(5));
    std::vector<std::thread> threads;
    for (const char* who : {"a1", "a2", "a3", "a4"}) {
        threads.emplace_back([&store, who] {
            for (;;) {
                auto t = store.next_task(who);
                if (!t) return;
                store.submit(who, t->id(), label(1));
            }
        });
    }
    for (auto& t : threads) t.join();
    for (const auto& t : store.tasks()) {
        EXPECT_EQ(t.records.size(), 3u) << t.id();
        std::set<std::string> who;
        for (const auto& r : t.records) who.insert(r.annotator_id);
        EXPECT_EQ(who.size(), 3u);
        EXPECT_EQ(t.status, TaskStatus::Done);
        EXPECT_TRUE(t.claims.empty());
    }
}

class TempDir {
public:
    explicit TempDir(const std::string& name) : path_(std::filesystem::temp_directory_path() / name) {
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() { std::filesystem::remove_all(path_); }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

TEST(Store, PersistsAcrossRestarts) {
    TempDir dir("arcade_annotation_persist");
    std::vector<AnnotationTask> before;
    {
        AnnotationStore store(roster(), dir.path());
        store.import_tasks(make_tasks(3));
        fill(store, "t0", {label(2), label(2), label(2)});
        store.snapshot();
        store.next_task("a4");
        store.submit("a4", "t1", label(1));
        before = store.tasks();
    }
    // A crash mid-append leaves a torn last line.
    std::ofstream(dir.path() / "events.jsonl", std::ios::app) << R"({"type": "subm)";
    AnnotationStore reopened(roster(), dir.path());
    EXPECT_EQ(reopened.tasks(), before);
    reopened.next_task("a1");
    reopened.submit("a1", "t1", label(1));
    EXPECT_EQ(reopened.get("t1")->records.size(), 2u);
}

TEST(Store, ReadTaskFile) {
    TempDir dir("arcade_annotation_tasks");
    const auto path = dir.path() / "tasks.jsonl";
    std::ofstream(path) << R"({"id":"x1","text":"t","image":"x1.png","source":"real","split":"test",)"
                        << R"("priors":{"y_text":0,"e_text":"a","y_image":2,"e_image":"b"}})" << "\n"
                        << R"({"id":"x2","text":"t","image":"x2.png","source":"real","split":"test"})" << "\n";
    const auto tasks = AnnotationStore::read_task_file(path);
    ASSERT_EQ(tasks.size(), 2u);
    EXPECT_EQ(tasks[0].priors->y_image, HateCategory::Sexist);
    EXPECT_FALSE(tasks[1].priors.has_value());
}

// ---------------------------------------------------------------------------
// REST

class ServerTest : public ::testing::Test {
protected:
    void SetUp() override {
        store_.import_tasks(make_tasks(2));
        const auto file = dir_.path() / "transcripts.jsonl";
        std::ofstream(file) << R"({"sample_id":"t0","mode":"arcade","termination":"verdict","utterances":[]})" << "\n";
        transcripts_.add(dir_.path());
        ServerOptions opts;
        opts.port = 0;
        server_ = std::make_unique<AnnotationServer>(store_, transcripts_, opts);
        port_ = server_->start();
    }
    void TearDown() override { server_->stop(); }

    httplib::Client client(const std::string& token = "") {
        httplib::Client c("127.0.0.1", port_);
        if (!token.empty()) c.set_bearer_token_auth(token);
        return c;
    }

    TempDir dir_{"arcade_server_test"};
    AnnotationStore store_{roster()};
    TranscriptIndex transcripts_;
    std::unique_ptr<AnnotationServer> server_;
    int port_ = 0;
};

TEST_F(ServerTest, AuthIsRequired) {
    auto c = client();
    auto res = c.Get("/api/progress");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 401);
    auto bad = client("wrong");
    EXPECT_EQ(bad.Get("/api/progress")->status, 401);
    auto a1 = client("t-a1");
    EXPECT_EQ(a1.Get("/api/tasks/next?annotator=a2")->status, 403);
}

TEST_F(ServerTest, AnnotateFlow) {
    auto a1 = client("t-a1");
    auto res = a1.Get("/api/tasks/next?annotator=a1");
    ASSERT_TRUE(res);
    ASSERT_EQ(res->status, 200) << res->body;
    const json next = json::parse(res->body);
    EXPECT_EQ(next["task"]["id"], "t0");
    EXPECT_FALSE(next["task"].contains("records"));
    const auto version = next["task"]["version"].get<std::uint64_t>();

    res = a1.Post("/api/tasks/t0/annotation", json{{"label", 1}, {"version", version + 3}}.dump(), "application/json");
    EXPECT_EQ(res->status, 409);
    res = a1.Post("/api/tasks/t0/annotation", json{{"label", 1}, {"version", version}}.dump(), "application/json");
    EXPECT_EQ(res->status, 200) << res->body;
    EXPECT_EQ(json::parse(res->body)["task"]["record_count"], 1);
    res = a1.Post("/api/tasks/t0/annotation", json{{"label", 1}}.dump(), "application/json");
    EXPECT_EQ(res->status, 409);
    res = a1.Post("/api/tasks/t0/annotation", "{oops", "application/json");
    EXPECT_EQ(res->status, 400);
    res = a1.Post("/api/tasks/t0/annotation", json{{"label", 9}}.dump(), "application/json");
    EXPECT_EQ(res->status, 400);

    for (const char* who : {"a2", "a3"}) {
        auto c = client(std::string("t-") + who);
        ASSERT_EQ(c.Get((std::string("/api/tasks/next?annotator=") + who).c_str())->status, 200);
        res = c.Post("/api/tasks/t0/annotation", json{{"label", 1}, {"not_sure", who == std::string("a3")}}.dump(),
                     "application/json");
        EXPECT_EQ(res->status, 200);
    }
    EXPECT_EQ(json::parse(a1.Get("/api/tasks/t0")->body)["status"], "needs_adjudication");

    res = a1.Post("/api/tasks/t0/adjudication", json{{"label", 1}}.dump(), "application/json");
    EXPECT_EQ(res->status, 403);
    auto expert = client("t-e1");
    res = expert.Post("/api/tasks/t0/adjudication", json{{"label", 1}}.dump(), "application/json");
    ASSERT_EQ(res->status, 200) << res->body;
    const json done = json::parse(res->body)["task"];
    EXPECT_EQ(done["status"], "done");
    EXPECT_EQ(done["records"].size(), 3u);

    const json progress = json::parse(expert.Get("/api/progress")->body);
    EXPECT_EQ(progress["counts"]["done"], 1);
    EXPECT_EQ(progress["total"], 2);
    EXPECT_EQ(progress["kappa"], 1.0);
}

TEST_F(ServerTest, LookupsAndTranscripts) {
    auto c = client("t-a4");
    EXPECT_EQ(c.Get("/api/tasks/missing")->status, 404);
    EXPECT_EQ(c.Get("/api/tasks/t1")->status, 200);
    auto res = c.Get("/api/transcripts/t0");
    ASSERT_EQ(res->status, 200);
    const json body = json::parse(res->body);
    EXPECT_EQ(body["sample_id"], "t0");
    EXPECT_EQ(body["records"].size(), 1u);
    EXPECT_EQ(c.Get("/api/transcripts/t1")->status, 404);
    EXPECT_EQ(c.Post("/api/tasks/t1/annotation", json{{"label", 1}}.dump(), "application/json")->status, 409);
    // Default annotator is the token owner.
    EXPECT_EQ(json::parse(c.Get("/api/tasks/next")->body)["task"]["id"], "t0");
}

}  // namespace
}  // namespace arcade
