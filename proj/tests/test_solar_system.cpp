#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "solar_ar/solar_system.hpp"
#include "support.hpp"

using namespace solar_ar;
using solar_ar::fixtures::Rng;

namespace {

constexpr double kPi = std::numbers::pi;

template <typename F>
void expect_error(F f, ErrorCode code) {
  try {
    f();
    ADD_FAILURE() << "no error, expected " << to_string(code);
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), code) << e.what();
  }
}

BodySpec body(const std::string& name, std::optional<std::string> parent, double orbit, double period,
              double phase = 0.0) {
  return {name, std::move(parent), orbit, period, 0.01, Rgb{255, 255, 255}, phase};
}

Catalog sun_earth_moon() {
  return {body("Sun", std::nullopt, 0.0, 1.0), body("Earth", "Sun", 0.2, 40.0), body("Moon", "Earth", 0.03, 3.0)};
}

Catalog demo_catalog() { return load_catalog(std::string(SOLAR_AR_DATA_DIR) + "/demo/catalog.json"); }

}  // namespace

// ---------------------------------------------------------------------------
// Catalog

TEST(Catalog, ValidForestLoads) {
  const Json j = Json::parse(R"({"bodies":[
    {"name":"Sun","parent":null,"orbit_radius_m":0,"period_s":1,"body_radius_m":0.05,"color":[255,200,64],"phase0_rad":0},
    {"name":"Earth","parent":"Sun","orbit_radius_m":0.2,"period_s":40,"body_radius_m":0.02,"color":[60,120,255]},
    {"name":"Moon","parent":"Earth","orbit_radius_m":0.03,"period_s":3,"body_radius_m":0.006,"color":[200,200,200]}]})");
  const Catalog c = catalog_from_json(j);
  ASSERT_EQ(c.size(), 3u);
  EXPECT_EQ(*c[2].parent, "Earth");
  EXPECT_EQ(c[1].phase0, 0.0);
  EXPECT_EQ(catalog_from_json(to_json(c)).size(), 3u);
  EXPECT_EQ(to_json(catalog_from_json(to_json(c))), to_json(c));
}

TEST(Catalog, CycleIsRejected) {
  Catalog c{body("A", "B", 0.1, 1.0), body("B", "A", 0.1, 1.0)};
  expect_error([&] { validate(c); }, ErrorCode::kCyclicParent);
  Catalog self{body("A", "A", 0.1, 1.0)};
  expect_error([&] { validate(self); }, ErrorCode::kCyclicParent);
}

TEST(Catalog, DuplicateNameIsRejected) {
  Catalog c{body("Sun", std::nullopt, 0, 1), body("Earth", "Sun", 0.1, 1), body("Earth", "Sun", 0.2, 2)};
  expect_error([&] { validate(c); }, ErrorCode::kDuplicateId);
}

TEST(Catalog, RangesAndParentsAreChecked) {
  expect_error([] { validate({body("A", "Nope", 0.1, 1.0)}); }, ErrorCode::kUnknownName);
  expect_error([] { validate({body("A", std::nullopt, -0.1, 1.0)}); }, ErrorCode::kInvalidArgument);
  expect_error([] { validate({body("A", std::nullopt, 0.1, 0.0)}); }, ErrorCode::kInvalidArgument);
  expect_error([] { validate({body("", std::nullopt, 0.0, 1.0)}); }, ErrorCode::kInvalidArgument);
  Catalog zero_radius{body("A", std::nullopt, 0.0, 1.0)};
  zero_radius[0].body_radius = 0.0;
  expect_error([&] { validate(zero_radius); }, ErrorCode::kInvalidArgument);
  // A body that does not orbit needs no period.
  EXPECT_NO_THROW(validate({body("A", std::nullopt, 0.0, 0.0)}));
}

TEST(Catalog, MalformedJsonIsAParseError) {
  expect_error([] { catalog_from_json(Json::parse(R"({"planets":[]})")); }, ErrorCode::kParse);
  expect_error([] { catalog_from_json(Json::parse(R"({"bodies":[{"name":"Sun"}]})")); }, ErrorCode::kParse);
  expect_error(
      [] {
        catalog_from_json(Json::parse(
            R"({"bodies":[{"name":"Sun","orbit_radius_m":"far","body_radius_m":0.1,"color":[1,2,3]}]})"));
      },
      ErrorCode::kParse);
  expect_error([] { load_catalog("/nonexistent/catalog.json"); }, ErrorCode::kIo);
}

TEST(Catalog, DemoCatalogHasSunPlanetsAndMoon) {
  const Catalog c = demo_catalog();
  EXPECT_EQ(c.size(), 10u);
  EXPECT_FALSE(find_body(c, "Sun").parent);
  EXPECT_EQ(*find_body(c, "Moon").parent, "Earth");
  for (const BodySpec& b : c) EXPECT_LE(b.orbit_radius, 0.25) << b.name;
}

// ---------------------------------------------------------------------------
// body_position

TEST(BodyPosition, PhaseConvention) {
  const Catalog c = sun_earth_moon();
  const Vec3 p = body_position(c, "Earth", 0.0);
  EXPECT_EQ(p.x, 0.2);
  EXPECT_EQ(p.y, 0.0);
  EXPECT_EQ(p.z, 0.0);
  EXPECT_EQ(body_position(c, "Sun", 123.0), Vec3{});
}

TEST(BodyPosition, HalfOrbit) {
  const Catalog c = sun_earth_moon();
  const Vec3 p = body_position(c, "Earth", 20.0);
  EXPECT_NEAR(p.x, -0.2, 1e-12);
  EXPECT_NEAR(p.z, 0.0, 1e-12);
}

TEST(BodyPosition, HierarchicalComposition) {
  // Earth at a quarter orbit and the Moon at a whole number of its orbits.
  Catalog c{body("Sun", std::nullopt, 0.0, 1.0), body("Earth", "Sun", 0.2, 40.0), body("Moon", "Earth", 0.03, 5.0)};
  const Vec3 p = body_position(c, "Moon", 10.0);
  EXPECT_NEAR(p.x, 0.03, 1e-12);
  EXPECT_NEAR(p.y, 0.0, 0.0);
  EXPECT_NEAR(p.z, 0.2, 1e-12);
}

TEST(BodyPosition, PhaseOffsetAndUnknownName) {
  Catalog c{body("Sun", std::nullopt, 0.0, 1.0), body("Mars", "Sun", 0.1, 10.0, kPi / 2)};
  const Vec3 p = body_position(c, "Mars", 0.0);
  EXPECT_NEAR(p.x, 0.0, 1e-15);
  EXPECT_NEAR(p.z, 0.1, 1e-15);
  expect_error([&] { body_position(c, "Pluto", 0.0); }, ErrorCode::kUnknownName);
}

TEST(BodyPosition, PeriodicityWithinTolerance) {
  const Catalog c = demo_catalog();
  Rng rng(3);
  for (int i = 0; i < 2000; ++i) {
    const double t = rng.uniform(0.0, 1e6);
    for (const BodySpec& b : c) {
      // Periodicity of the body's own orbit about its parent.
      const Vec3 parent = b.parent ? body_position(c, *b.parent, t + b.period) : Vec3{};
      const Vec3 rel_later = body_position(c, b.name, t + b.period) - parent;
      const Vec3 parent_now = b.parent ? body_position(c, *b.parent, t) : Vec3{};
      const Vec3 rel_now = body_position(c, b.name, t) - parent_now;
      ASSERT_LT(norm(rel_later - rel_now), 1e-9) << b.name << " t=" << t;
    }
  }
}

// ---------------------------------------------------------------------------
// step

TEST(Step, RadiusConservedAtHighTimeScale) {
  const Catalog c = demo_catalog();
  SystemState s(c, 0.0, 1e6);
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    s = step(s, 1.0 / 30.0, c);
    for (const BodySpec& b : c) {
      const Vec3 p = s.position(b.name);
      ASSERT_EQ(p.y, 0.0) << b.name;
      const Vec3 parent = b.parent ? s.position(*b.parent) : Vec3{};
      worst = std::max(worst, std::abs(norm(p - parent) - b.orbit_radius));
    }
  }
  EXPECT_LT(worst, 1e-9);
  EXPECT_NEAR(s.sim_time(), 1e6 * 10000.0 / 30.0, 1e-3);
}

TEST(Step, PositionsMatchAnalyticEvaluation) {
  const Catalog c = demo_catalog();
  SystemState s(c, 5.0, 2.5);
  s = step(s, 0.75, c);
  EXPECT_DOUBLE_EQ(s.sim_time(), 5.0 + 0.75 * 2.5);
  for (const BodySpec& b : c) EXPECT_EQ(s.position(b.name), body_position(c, b.name, s.sim_time()));
}

TEST(Step, FrozenTimeKeepsPositions) {
  const Catalog c = demo_catalog();
  SystemState s(c, 17.0, 0.0);
  const SystemState before = s;
  for (double dt : {0.0, 0.5, 1e3}) s = step(s, dt, c);
  EXPECT_EQ(s.sim_time(), before.sim_time());
  EXPECT_EQ(s.positions(), before.positions());
}

TEST(Step, FullPeriodReturnsToStart) {
  Catalog c{body("Sun", std::nullopt, 0.0, 1.0), body("Earth", "Sun", 0.2, 40.0)};
  SystemState s(c, 3.0, 4.0);
  const Vec3 start = s.position("Earth");
  s = step(s, 10.0, c);  // 40 s of simulation time
  EXPECT_LT(norm(s.position("Earth") - start), 1e-9);
}

TEST(Step, TwoHalfStepsEqualOneFullStep) {
  const Catalog c = demo_catalog();
  Rng rng(17);
  for (int i = 0; i < 1000; ++i) {
    const double scale = rng.uniform(0.0, 1e6);
    const double dt = rng.uniform(0.0, 10.0);
    const SystemState s0(c, rng.uniform(0.0, 1e4), scale);
    const SystemState one = step(s0, dt, c);
    const SystemState two = step(step(s0, dt / 2, c), dt / 2, c);
    ASSERT_EQ(one.sim_time(), two.sim_time());
    ASSERT_EQ(one.positions(), two.positions());
  }
}

TEST(Step, PartitioningDoesNotMatter) {
  const Catalog c = demo_catalog();
  Rng rng(23);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<double> pieces;
    const int n = rng.integer(1, 60);
    for (int i = 0; i < n; ++i) pieces.push_back(rng.uniform(0.0, 0.1));
    // The same total in a different partition: shuffled, with pieces split
    // exactly (d - a is exact for a in [d/2, d]).
    std::vector<double> other;
    for (double d : pieces) {
      if (rng.coin()) {
        const double a = d * rng.uniform(0.5, 1.0);
        other.push_back(a);
        other.push_back(d - a);
      } else {
        other.push_back(d);
      }
    }
    std::shuffle(other.begin(), other.end(), rng.engine());

    const double scale = rng.uniform(0.0, 1e4);
    SystemState a(c, 0.0, scale);
    SystemState b(c, 0.0, scale);
    for (double d : pieces) a = step(a, d, c);
    for (double d : other) b = step(b, d, c);
    ASSERT_EQ(a.sim_time(), b.sim_time()) << "trial " << trial;
    ASSERT_EQ(a.positions(), b.positions());
  }
}

TEST(Step, TimeScaleChangeIsContinuous) {
  const Catalog c = sun_earth_moon();
  SystemState s(c, 0.0, 2.0);
  s = step(s, 1.5, c);
  EXPECT_EQ(s.sim_time(), 3.0);
  s.set_time_scale(0.5);
  EXPECT_EQ(s.sim_time(), 3.0);
  EXPECT_EQ(s.time_scale(), 0.5);
  s = step(s, 2.0, c);
  EXPECT_EQ(s.sim_time(), 4.0);
}

TEST(Step, InvalidInputsAreRejected) {
  const Catalog c = sun_earth_moon();
  SystemState s(c, 0.0, 1.0);
  expect_error([&] { step(s, -0.1, c); }, ErrorCode::kInvalidArgument);
  expect_error([&] { step(s, NAN, c); }, ErrorCode::kInvalidArgument);
  expect_error([&] { s.set_time_scale(-1.0); }, ErrorCode::kInvalidArgument);
  expect_error([&] { SystemState(c, 0.0, INFINITY); }, ErrorCode::kInvalidArgument);
  expect_error([&] { (void)s.position("Vulcan"); }, ErrorCode::kUnknownName);
}
