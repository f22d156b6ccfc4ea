#include <gtest/gtest.h>

#include <thread>

#include <httplib.h>

#include "cmwm/errors.hpp"
#include "cmwm/pipeline.hpp"
#include "cmwm/scenario.hpp"
#include "support.hpp"

namespace cmwm {
namespace {

using nlohmann::json;

class FailingProvider final : public EmbeddingProvider {
 public:
  std::vector<double> embed(std::string_view, std::size_t) override {
    throw ProviderError("upstream down", true);
  }
};

// One model trained on the synthetic cohort, shared by every test here.
class ScenarioTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    const testing::SyntheticSetup setup = testing::acceptance_setup();
    synthetic_ = new SyntheticCohort(generate_synthetic_cohort(setup.spec));
    RunConfig run = setup.run;
    run.train.epochs = 12;
    const PreparedData data = prepare_data(synthetic_->cohort, run.data);
    test_split_ = new Cohort(data.splits.test);
    checkpoint_ = new Checkpoint(train_model(run, data).checkpoint);
  }
  static void TearDownTestSuite() {
    delete synthetic_;
    delete test_split_;
    delete checkpoint_;
  }

  ScenarioService make(EmbeddingProvider* provider = nullptr) const {
    return ScenarioService(*checkpoint_, synthetic_->cohort, synthetic_->action_labels, provider);
  }

  static SyntheticCohort* synthetic_;
  static Cohort* test_split_;
  static Checkpoint* checkpoint_;
};

SyntheticCohort* ScenarioTest::synthetic_ = nullptr;
Cohort* ScenarioTest::test_split_ = nullptr;
Checkpoint* ScenarioTest::checkpoint_ = nullptr;

TEST_F(ScenarioTest, EmptyEditsReproduceBaseline) {
  const ScenarioService svc = make();
  const auto& id = test_split_->patients.front().patient_id;
  const ServiceResponse r = svc.rollout({{"patient_id", id}, {"edits", json::array()}});
  ASSERT_EQ(r.status, 200) << r.body.dump();
  EXPECT_EQ(r.body["baseline"], r.body["counterfactual"]);
  for (const auto& d : r.body["delta"]) EXPECT_EQ(d.get<double>(), 0.0);
  EXPECT_EQ(r.body["baseline"].size(), r.body["observed"].size());
}

TEST_F(ScenarioTest, PositiveActionRaisesTheTrajectory) {
  const ScenarioService svc = make();
  // Action 0 adds +2 per period in the generator; clearing the negative
  // action 1 isolates the positive effect.
  ASSERT_GT(synthetic_->oracle.spec().action_effects[0], 0.0);
  std::size_t raised = 0, checked = 0;
  double mean_final = 0.0;
  for (const auto& p : test_split_->patients) {
    const std::size_t c = dynamic_context(p.length());
    if (p.length() - c < 2) continue;
    json edits = json::array();
    for (std::size_t t = c; t < p.length(); ++t) edits.push_back({{"period", t}, {"set", {0}}});
    const ServiceResponse r = svc.rollout({{"patient_id", p.patient_id}, {"edits", edits}});
    ASSERT_EQ(r.status, 200);
    EXPECT_EQ(r.body["delta"][0].get<double>(), 0.0);  // period c is driven by action c-1
    bool untouched = true;
    for (std::size_t t = c; t + 1 < p.length(); ++t) untouched = untouched && p.periods[t].a_struct[0] == 1.0;
    if (untouched) continue;
    const double final_delta = r.body["delta"].back().get<double>();
    mean_final += final_delta;
    raised += final_delta > 0.0;
    ++checked;
  }
  ASSERT_GT(checked, 5u);
  EXPECT_GT(mean_final / checked, 0.0);
  EXPECT_GE(static_cast<double>(raised), 0.9 * checked) << raised << "/" << checked;
}

TEST_F(ScenarioTest, IdenticalRequestsIdenticalResponses) {
  const ScenarioService svc = make();
  const json req = {{"patient_id", test_split_->patients[1].patient_id},
                    {"edits", {{{"period", 4}, {"clear", {0, 1}}}}},
                    {"context_len", 3},
                    {"anchor", {{"enabled", true}}}};
  const ServiceResponse a = svc.rollout(req), b = svc.rollout(req);
  ASSERT_EQ(a.status, 200) << a.body.dump();
  EXPECT_EQ(a.body.dump(), b.body.dump());
  EXPECT_TRUE(a.body["anchored"].get<bool>());
}

TEST_F(ScenarioTest, ErrorClasses) {
  FailingProvider failing;
  const ScenarioService svc = make(&failing);
  const auto& p = test_split_->patients.front();
  EXPECT_EQ(svc.rollout({{"patient_id", "nobody"}}).status, 404);
  EXPECT_EQ(svc.rollout(json::object()).status, 400);
  EXPECT_EQ(svc.rollout({{"patient_id", p.patient_id}, {"colour", 1}}).status, 400);
  EXPECT_EQ(svc.rollout({{"patient_id", p.patient_id}, {"context_len", p.length()}}).status, 400);
  EXPECT_EQ(svc.rollout({{"patient_id", p.patient_id}, {"edits", {{{"period", 0}, {"set", {0}}}}}}).status,
            400);
  EXPECT_EQ(svc.rollout({{"patient_id", p.patient_id},
                         {"edits", {{{"period", p.length() - 1}, {"set", {99}}}}}})
                .status,
            400);
  EXPECT_EQ(svc.rollout({{"patient_id", p.patient_id},
                         {"edits", {{{"period", p.length() - 1}, {"comm_embedding", {1.0}}}}}})
                .status,
            400);
  EXPECT_EQ(svc.rollout({{"patient_id", p.patient_id},
                         {"edits", {{{"period", p.length() - 1}, {"comm_text", "hello"}}}}})
                .status,
            502);
  EXPECT_EQ(make().rollout({{"patient_id", p.patient_id},
                            {"edits", {{{"period", p.length() - 1}, {"comm_text", "hello"}}}}})
                .status,
            400);
  EXPECT_EQ(svc.get_patient("nobody").status, 404);
}

TEST_F(ScenarioTest, TextAndEmbeddingEditsAgree) {
  HashEmbeddingProvider hash(2);
  const ScenarioService svc = make(&hash);
  const auto& p = test_split_->patients[2];
  const std::size_t period = dynamic_context(p.length());
  const auto e = hash.embed("taking every dose", checkpoint_->model.config().d_a_comm);
  const ServiceResponse by_text = svc.rollout(
      {{"patient_id", p.patient_id}, {"edits", {{{"period", period}, {"comm_text", "taking every dose"}}}}});
  const ServiceResponse by_vec = svc.rollout(
      {{"patient_id", p.patient_id}, {"edits", {{{"period", period}, {"comm_embedding", e}}}}});
  ASSERT_EQ(by_text.status, 200);
  EXPECT_EQ(by_text.body["counterfactual"], by_vec.body["counterfactual"]);
}

TEST_F(ScenarioTest, ListAndGetAgree) {
  const ScenarioService svc = make();
  const json list = svc.list_patients().body["patients"];
  ASSERT_EQ(list.size(), synthetic_->cohort.patients.size());
  for (std::size_t i = 0; i < 5; ++i) {
    const json detail = svc.get_patient(list[i]["patient_id"].get<std::string>()).body;
    EXPECT_EQ(detail["periods"], list[i]["periods"]);
    EXPECT_EQ(detail["history"].size(), list[i]["periods"].get<std::size_t>());
    EXPECT_EQ(detail["action_labels"].size(), synthetic_->cohort.dims.d_a_struct);
  }
  EXPECT_EQ(svc.model_info().body["parameter_count"], checkpoint_->model.parameter_count());
}

TEST_F(ScenarioTest, EmptyCohortListsNothing) {
  const ScenarioService svc(*checkpoint_, Cohort{}, {}, nullptr);
  EXPECT_TRUE(svc.list_patients().body["patients"].empty());
}

TEST_F(ScenarioTest, HttpRoundTrip) {
  const ScenarioService svc = make();
  ScenarioServer server(svc);
  const int port = server.bind("127.0.0.1", 0);
  std::thread t([&] { server.listen(); });
  server.wait_until_ready();

  httplib::Client client("127.0.0.1", port);
  const auto model = client.Get("/v1/model");
  ASSERT_TRUE(model);
  EXPECT_EQ(model->status, 200);
  EXPECT_EQ(model->get_header_value("Access-Control-Allow-Origin"), "*");
  EXPECT_EQ(json::parse(model->body)["version"], kServiceVersion);

  const auto& id = test_split_->patients.front().patient_id;
  const auto patient = client.Get("/v1/patients/" + id);
  ASSERT_TRUE(patient);
  EXPECT_EQ(patient->status, 200);
  EXPECT_EQ(client.Get("/v1/patients/nobody")->status, 404);

  const json req = {{"patient_id", id}};
  const auto roll = client.Post("/v1/rollout", req.dump(), "application/json");
  ASSERT_TRUE(roll);
  EXPECT_EQ(roll->status, 200);
  EXPECT_EQ(json::parse(roll->body), svc.rollout(req).body);
  EXPECT_EQ(client.Post("/v1/rollout", "{oops", "application/json")->status, 400);
  EXPECT_EQ(client.Options("/v1/rollout")->status, 204);

  server.stop();
  t.join();
}

TEST(ScenarioLabels, CkdDictionaryCoversStructuredActions) {
  const ModelConfig cfg = ModelConfig::ckd();
  Checkpoint ckpt{CmwmModel::init(cfg), Standardizer{}, {}, {}, 0, {}, json::object()};
  std::vector<std::string> labels;
  for (int j = 0; j < 62; ++j) labels.push_back("feature_" + std::to_string(j));
  const ScenarioService svc(ckpt, Cohort{}, labels, nullptr);
  EXPECT_EQ(svc.model_info().body["action_labels"].size(), 62u);
  labels.pop_back();
  EXPECT_THROW(ScenarioService(ckpt, Cohort{}, labels, nullptr), ValidationError);
}

}  // namespace
}  // namespace cmwm
