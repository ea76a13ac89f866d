#include <gtest/gtest.h>

#include <boost/beast/core/detail/base64.hpp>

#include <string>
#include <vector>

#include "solar_ar/wire.hpp"
#include "support.hpp"

using namespace solar_ar;
using solar_ar::fixtures::Rng;

namespace {

std::vector<std::uint8_t> bytes_of(const std::string& s) { return {s.begin(), s.end()}; }

std::string oracle_encode(const std::vector<std::uint8_t>& in) {
  namespace b64 = boost::beast::detail::base64;
  std::string out(b64::encoded_size(in.size()), '\0');
  out.resize(b64::encode(out.data(), in.data(), in.size()));
  return out;
}

template <typename T>
T expect_message(const std::string& text) {
  const auto parsed = parse_client_message(text);
  const auto* msg = std::get_if<ClientMessage>(&parsed);
  if (!msg) {
    ADD_FAILURE() << "rejected: " << std::get<WireError>(parsed).reason;
    return T{};
  }
  const T* m = std::get_if<T>(msg);
  if (!m) {
    ADD_FAILURE() << "wrong message kind for " << text;
    return T{};
  }
  return *m;
}

std::string reason_for(const std::string& text) {
  const auto parsed = parse_client_message(text);
  const auto* err = std::get_if<WireError>(&parsed);
  return err ? err->reason : "accepted";
}

TickResult sample_tick() {
  TickResult r;
  r.seq = 17;
  r.t = 17 / 30.0;
  r.frame = Frame::filled_rgba(16, 12, Rgb{10, 20, 30});
  r.frame.set_rgb(3, 4, Rgb{255, 0, 0});
  r.mode = Mode::kAnchor;
  r.lost = true;
  r.time_scale = 2.5;
  r.sim_time = 1.25;
  r.root_pose_world = {rotation_y(0.5), {0.1, 0.02, -0.3}};
  r.root_yaw = 0.5;
  r.bodies = {{"Sun", {0.1, 0.02, -0.3}, Vec2{320.5, 240.25}, 12.0}, {"Earth", {0.3, 0.02, -0.3}, std::nullopt, 0.0}};
  return r;
}

}  // namespace

// ---------------------------------------------------------------------------
// Base64

TEST(Base64, Rfc4648Vectors) {
  const std::vector<std::pair<std::string, std::string>> vectors{
      {"", ""},         {"f", "Zg=="},         {"fo", "Zm8="},        {"foo", "Zm9v"},
      {"foob", "Zm9vYg=="}, {"fooba", "Zm9vYmE="}, {"foobar", "Zm9vYmFy"}};
  for (const auto& [plain, encoded] : vectors) {
    EXPECT_EQ(base64_encode(bytes_of(plain)), encoded);
    const auto back = base64_decode(encoded);
    ASSERT_TRUE(back) << encoded;
    EXPECT_EQ(*back, bytes_of(plain));
  }
}

TEST(Base64, MatchesOracleAndRoundTrips) {
  Rng rng(64);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<std::uint8_t> in(static_cast<std::size_t>(rng.integer(0, 300)));
    for (auto& b : in) b = rng.byte();
    const std::string enc = base64_encode(in);
    ASSERT_EQ(enc, oracle_encode(in));
    const auto dec = base64_decode(enc);
    ASSERT_TRUE(dec);
    ASSERT_EQ(*dec, in);
  }
}

TEST(Base64, RejectsMalformedInput) {
  for (const char* bad : {"Zg=", "Zg", "Z===", "=Zg=", "Zg=a", "Zm9v====", "Zm9v Zg==", "Zm9-", "Zg==Zm9v"}) {
    EXPECT_FALSE(base64_decode(bad)) << bad;
  }
}

// ---------------------------------------------------------------------------
// Client messages

TEST(ClientMessage, ParsesTouch) {
  const auto m = expect_message<TouchMessage>(R"({"type":"touch","touch_id":2,"phase":"move","x":320,"y":240.5})");
  EXPECT_EQ(m.event.touch_id, 2);
  EXPECT_EQ(m.event.phase, TouchPhase::kMove);
  EXPECT_EQ(m.event.pixel, (Vec2{320, 240.5}));
}

TEST(ClientMessage, ParsesModeAndTimeScale) {
  EXPECT_EQ(expect_message<SetModeMessage>(R"({"type":"set_mode","mode":"anchor"})").mode, Mode::kAnchor);
  EXPECT_EQ(expect_message<SetModeMessage>(R"({"type":"set_mode","mode":"marker"})").mode, Mode::kMarker);
  EXPECT_EQ(expect_message<SetTimeScaleMessage>(R"({"type":"set_time_scale","value":2.5})").value, 2.5);
  EXPECT_EQ(expect_message<SetTimeScaleMessage>(R"({"type":"set_time_scale","value":0})").value, 0.0);
}

TEST(ClientMessage, ClassifiesErrors) {
  EXPECT_EQ(reason_for("{not json"), "parse");
  EXPECT_EQ(reason_for(""), "parse");
  EXPECT_EQ(reason_for("[1,2]"), "invalid");
  EXPECT_EQ(reason_for(R"({"touch_id":1})"), "invalid");
  EXPECT_EQ(reason_for(R"({"type":7})"), "invalid");
  EXPECT_EQ(reason_for(R"({"type":"touch","touch_id":0,"phase":"hover","x":1,"y":1})"), "invalid");
  EXPECT_EQ(reason_for(R"({"type":"touch","touch_id":0,"phase":"down","x":"a","y":1})"), "invalid");
  EXPECT_EQ(reason_for(R"({"type":"touch","phase":"down","x":1,"y":1})"), "invalid");
  EXPECT_EQ(reason_for(R"({"type":"set_mode","mode":"vr"})"), "invalid");
  EXPECT_EQ(reason_for(R"({"type":"set_time_scale","value":-1})"), "invalid");
  EXPECT_EQ(reason_for(R"({"type":"set_time_scale"})"), "invalid");
  EXPECT_EQ(reason_for(R"({"type":"teleport"})"), "unknown_type");
}

TEST(ClientMessage, RoundTripsThroughText) {
  Rng rng(9);
  for (int i = 0; i < 200; ++i) {
    ClientMessage m;
    switch (rng.integer(0, 2)) {
      case 0:
        m = TouchMessage{{rng.integer(0, 9), static_cast<TouchPhase>(rng.integer(0, 2)), rng.vec2(0, 600), 0.0}};
        break;
      case 1:
        m = SetModeMessage{rng.coin() ? Mode::kMarker : Mode::kAnchor};
        break;
      default:
        m = SetTimeScaleMessage{rng.uniform(0, 1e6)};
    }
    const auto parsed = parse_client_message(to_wire(m));
    ASSERT_TRUE(std::holds_alternative<ClientMessage>(parsed));
    ASSERT_EQ(to_wire(std::get<ClientMessage>(parsed)), to_wire(m));
  }
}

TEST(ErrorMessage, ParseErrorHasTheDocumentedShape) {
  EXPECT_EQ(error_message({"parse", ""}), R"({"reason":"parse","type":"error"})");
  const Json j = Json::parse(error_message({"mode", "no marker base"}));
  EXPECT_EQ(j["type"], "error");
  EXPECT_EQ(j["reason"], "mode");
  EXPECT_EQ(j["detail"], "no marker base");
}

// ---------------------------------------------------------------------------
// Server messages

TEST(ServerMessage, FrameCarriesThePngImage) {
  const TickResult r = sample_tick();
  const Json j = Json::parse(frame_message(r));
  EXPECT_EQ(j["type"], "frame");
  EXPECT_EQ(j["seq"], 17);
  EXPECT_EQ(j["w"], 16);
  EXPECT_EQ(j["h"], 12);
  EXPECT_EQ(j["encoding"], "png-base64");
  const auto png = base64_decode(j["data"].get<std::string>());
  ASSERT_TRUE(png);
  EXPECT_EQ(*png, encode_png(r.frame));
  EXPECT_TRUE(decode_png(*png).same_pixels(r.frame));
}

TEST(ServerMessage, SceneHasTheDocumentedFields) {
  const Json j = Json::parse(scene_message(sample_tick()));
  EXPECT_EQ(j["type"], "scene");
  EXPECT_EQ(j["seq"], 17);
  EXPECT_EQ(j["mode"], "anchor");
  EXPECT_EQ(j["lost"], true);
  EXPECT_EQ(j["time_scale"], 2.5);
  EXPECT_EQ(j["anchor"]["pos"], Json::parse("[0.1,0.02,-0.3]"));
  EXPECT_EQ(j["anchor"]["yaw"], 0.5);
  ASSERT_EQ(j["bodies"].size(), 2u);
  EXPECT_EQ(j["bodies"][0]["name"], "Sun");
  EXPECT_EQ(j["bodies"][0]["screen"], Json::parse("[320.5,240.25]"));
  EXPECT_EQ(j["bodies"][0]["r_px"], 12.0);
  EXPECT_TRUE(j["bodies"][1]["screen"].is_null());
  EXPECT_EQ(j["bodies"][1]["world"], Json::parse("[0.3,0.02,-0.3]"));
}
