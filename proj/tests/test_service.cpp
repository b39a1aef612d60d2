#include <gtest/gtest.h>

#include <thread>

#include "knobgen/image_io.hpp"
#include "knobgen/service.hpp"
#include "test_util.hpp"

using namespace knobgen;

namespace {

Checkpoint tiny_checkpoint() {
    torch::manual_seed(0);
    KnobGenModel model(fixtures::tiny_model());
    fixtures::scramble(*model->fgc, 0.1, 1);
    return capture(model, "init", 0);
}

class ServiceTest : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        service_ = new GenerationService(tiny_checkpoint());
        server_ = new httplib::Server;
        service_->mount(*server_);
        port_ = server_->bind_to_any_port("127.0.0.1");
        thread_ = new std::thread([] { server_->listen_after_bind(); });
        server_->wait_until_ready();
    }
    static void TearDownTestSuite() {
        server_->stop();
        thread_->join();
        delete thread_;
        delete server_;
        delete service_;
    }

    static nlohmann::json request(int gamma = 3, int steps = 6) {
        auto p = torch::zeros({8, 8}, torch::kUInt8);
        p.index_put_({2, torch::indexing::Slice(1, 7)}, 1);
        return {{"sketch_png_b64", base64_encode(encode_sketch_png(SketchImage(p)))},
                {"prompt", "a red square"},
                {"gamma", gamma},
                {"steps", steps},
                {"seed", 11}};
    }

    httplib::Client client() { return httplib::Client("127.0.0.1", port_); }

    static GenerationService* service_;
    static httplib::Server* server_;
    static std::thread* thread_;
    static int port_;
};

GenerationService* ServiceTest::service_ = nullptr;
httplib::Server* ServiceTest::server_ = nullptr;
std::thread* ServiceTest::thread_ = nullptr;
int ServiceTest::port_ = 0;

}  // namespace

TEST_F(ServiceTest, HealthDefaults) {
    auto res = client().Get("/health");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 200);
    auto j = nlohmann::json::parse(res->body);
    EXPECT_EQ(j["status"], "ok");
    EXPECT_EQ(j["gamma_default"], 20);
    EXPECT_EQ(j["S_default"], 50);
    EXPECT_EQ(j["image_size"], 8);
    EXPECT_EQ(j["model_id"], service_->model_id());
    EXPECT_EQ(res->get_header_value("Access-Control-Allow-Origin"), "*");
}

TEST_F(ServiceTest, ConfigIsSanitised) {
    auto res = client().Get("/config");
    ASSERT_TRUE(res);
    auto j = nlohmann::json::parse(res->body);
    EXPECT_FALSE(j.contains("vocabulary"));
    EXPECT_EQ(j["denoiser"]["image_size"], 8);
}

TEST_F(ServiceTest, RepeatedRequestsAreByteIdentical) {
    const auto body = request().dump();
    auto a = client().Post("/generate", body, "application/json");
    auto b = client().Post("/generate", body, "application/json");
    ASSERT_TRUE(a && b);
    ASSERT_EQ(a->status, 200) << a->body;
    auto ja = nlohmann::json::parse(a->body);
    auto jb = nlohmann::json::parse(b->body);
    ASSERT_EQ(ja["images"].size(), 1u);
    EXPECT_EQ(ja["images"][0]["gamma"], 3);
    EXPECT_EQ(ja["images"][0]["png_b64"], jb["images"][0]["png_b64"]);
    EXPECT_EQ(ja["model_id"], service_->model_id());
    EXPECT_EQ(ja["timings_ms"].size(), 1u);
    auto img = decode_rgb_png(base64_decode(ja["images"][0]["png_b64"].get<std::string>()));
    EXPECT_EQ(img.sizes(), (std::vector<int64_t>{3, 8, 8}));
}

TEST_F(ServiceTest, SpectrumIsOrderedAndSharesNoise) {
    auto req = request(0, 6);
    req["return_spectrum"] = {6, 0, 3};
    auto res = client().Post("/generate", req.dump(), "application/json");
    ASSERT_TRUE(res);
    ASSERT_EQ(res->status, 200) << res->body;
    auto j = nlohmann::json::parse(res->body);
    ASSERT_EQ(j["images"].size(), 3u);
    EXPECT_EQ(j["images"][0]["gamma"], 0);
    EXPECT_EQ(j["images"][1]["gamma"], 3);
    EXPECT_EQ(j["images"][2]["gamma"], 6);
    EXPECT_EQ(j["timings_ms"].size(), 3u);
    // each spectrum entry equals the single-gamma request with the same seed
    for (const auto& entry : j["images"]) {
        auto single = client().Post("/generate", request(entry["gamma"], 6).dump(), "application/json");
        EXPECT_EQ(nlohmann::json::parse(single->body)["images"][0]["png_b64"], entry["png_b64"]);
    }
}

TEST_F(ServiceTest, ConcurrentRequestsDoNotInterfere) {
    const auto body = request(2, 5).dump();
    const auto expected = nlohmann::json::parse(client().Post("/generate", body, "application/json")->body);
    std::vector<std::string> got(4);
    std::vector<std::thread> threads;
    for (int i = 0; i < 4; ++i) {
        threads.emplace_back([&, i] {
            auto req = request(i % 2 == 0 ? 2 : 4, 5);
            auto res = client().Post("/generate", req.dump(), "application/json");
            got[static_cast<size_t>(i)] = nlohmann::json::parse(res->body)["images"][0]["png_b64"];
        });
    }
    for (auto& t : threads) t.join();
    EXPECT_EQ(got[0], expected["images"][0]["png_b64"]);
    EXPECT_EQ(got[2], expected["images"][0]["png_b64"]);
}

TEST_F(ServiceTest, BadRequests) {
    auto post = [&](const std::string& body) { return client().Post("/generate", body, "application/json")->status; };
    EXPECT_EQ(post("not json"), 400);
    EXPECT_EQ(post("[1,2]"), 400);
    auto r = request();
    r.erase("prompt");
    EXPECT_EQ(post(r.dump()), 400);
    r = request(7, 6);
    EXPECT_EQ(post(r.dump()), 400);
    r = request();
    r["gamma"] = "high";
    EXPECT_EQ(post(r.dump()), 400);
    r = request();
    r["steps"] = 0;
    EXPECT_EQ(post(r.dump()), 400);
    r = request();
    r["steps"] = 51;  // the tiny model has T = 50
    EXPECT_EQ(post(r.dump()), 400);
    r = request();
    r["return_spectrum"] = nlohmann::json::array();
    EXPECT_EQ(post(r.dump()), 400);
    r = request();
    r["sketch_png_b64"] = "@@@";
    EXPECT_EQ(post(r.dump()), 400);
    r = request();
    r["sketch_png_b64"] = base64_encode({1, 2, 3, 4, 5});
    EXPECT_EQ(post(r.dump()), 422);
}

TEST(Service, OmittedFieldsUseDefaults) {
    GenerationService svc(tiny_checkpoint());
    nlohmann::json body{{"sketch_png_b64", base64_encode(encode_sketch_png(SketchImage(8, 8)))}, {"prompt", ""}};
    body["steps"] = 25;
    auto reply = svc.generate(body.dump());
    ASSERT_EQ(reply.status, 200) << reply.body.dump();
    EXPECT_EQ(reply.body["images"][0]["gamma"], 20);
    // the default gamma does not fit in four steps
    body["steps"] = 4;
    EXPECT_EQ(svc.generate(body.dump()).status, 400);
}
