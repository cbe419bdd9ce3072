#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "gaussmpm/error.hpp"
#include "gaussmpm/inference_loop.hpp"
#include "test_support.hpp"

using namespace gaussmpm;
using gaussmpm::testing::scratch_dir;
using nlohmann::ordered_json;

namespace {

std::string car_template() {
  const std::string_view prompt = default_reasoning_prompt();
  return std::string(prompt.substr(prompt.rfind("{\n")));
}

// Elastic report with the given stiffness confidences; the rest are 0.9.
std::string elastic_reply(double e_conf, double nu_conf, double kmh = 0.0) {
  ordered_json j;
  j["class_name"] = "ball";
  j["material"] = "Elastic";
  j["material_confidence"] = 0.9;
  j["mass"] = 0.5;
  j["mass_confidence"] = 0.9;
  j["density"] = 1100;
  j["density_confidence"] = 0.9;
  j["youngsModulus"] = 1e6;
  j["youngsModulus_confidence"] = e_conf;
  j["poissonsRatio"] = 0.45;
  j["poissonsRatio_confidence"] = nu_conf;
  j["external force"] = 0;
  j["externalForce_confidence"] = 0.9;
  j["initial velocity"] = kmh;
  j["initialVelocity_confidence"] = 0.9;
  return "Step 1 ... Step 3:\n```json\n" + j.dump(2) + "\n```";
}

PerceptionOptions small_options() {
  PerceptionOptions o;
  o.video_width = 64;
  o.video_height = 48;
  o.video_frames = 12;
  o.frames_per_query = 5;
  return o;
}

Image input_image() { return draw_square_frame(64, 48, 10, 8); }

}  // namespace

TEST(Parse, VerbatimTemplate) {
  const PropertyReport r = parse_property_report(car_template());
  EXPECT_FALSE(r.empty);
  EXPECT_EQ(r.class_name, "car");
  EXPECT_EQ(r.material_class, MaterialClass::Rigid);
  EXPECT_EQ(r.material_confidence, 0.0);
  ASSERT_EQ(r.attributes.size(), 7u);
  EXPECT_EQ(r.attributes.at("density").value, 7850.0);
  EXPECT_EQ(r.attributes.at("youngsModulus").value, 2.0e11);
  EXPECT_EQ(r.attributes.at("yieldStress").value, 0.7);
  EXPECT_EQ(r.attributes.at("externalForce").value, 0.0);
  EXPECT_EQ(r.attributes.at("initialVelocity").value, 0.0);
  EXPECT_EQ(r.static_params().size(), 5u);
  EXPECT_EQ(r.dynamic_params().size(), 2u);
  // every attribute plus the material is flagged at any gamma
  EXPECT_EQ(low_confidence_mask(r, 0.8).size(), 8u);
  EXPECT_EQ(r.confidences().size(), 8u);
}

TEST(Parse, FencesProseAndArrays) {
  const std::string body = R"({"material": "sand", "material_confidence": 0.9, "mass": 3, "mass_confidence": 0.9,
    "density": 1600, "density_confidence": 0.9, "frictionAngle": 32, "frictionAngle_confidence": 0.85})";
  for (const std::string& text :
       {body, "```json\n" + body + "\n```", "Here you go: " + body + " Hope it helps {not json}",
        "[" + body + "]", R"({"objects": [)" + body + "]}"}) {
    const PropertyReport r = parse_property_report(text);
    EXPECT_EQ(r.material_class, MaterialClass::Sand) << text;
    EXPECT_EQ(r.attributes.at("frictionAngle").value, 32.0) << text;
    EXPECT_EQ(r.attributes.at("frictionAngle").confidence, 0.85) << text;
  }
}

TEST(Parse, AlternateSpellings) {
  const PropertyReport r = parse_property_report(R"j({"material_type": "Newtonian Fluid",
    "material confidence": 0.7, "mass (kg)": "2.5", "mass_confidence": 0.8,
    "density": {"value": 1000, "confidence": 0.95}, "fluid viscosity": 0.001, "fluidViscosity_confidence": 0.6,
    "Bulk Modulus": 2.2e9, "bulkModulus confidence": 0.5})j");
  EXPECT_EQ(r.material_class, MaterialClass::NewtonianFluid);
  EXPECT_EQ(r.material_confidence, 0.7);
  EXPECT_EQ(r.attributes.at("mass").value, 2.5);
  EXPECT_EQ(r.attributes.at("density").confidence, 0.95);
  EXPECT_EQ(r.attributes.at("fluidViscosity").value, 0.001);
  EXPECT_EQ(r.attributes.at("bulkModulus").confidence, 0.5);
}

TEST(Parse, ClampsConfidenceWithWarning) {
  std::string text = elastic_reply(1.2, 0.9);
  const PropertyReport r = parse_property_report(text);
  EXPECT_EQ(r.attributes.at("youngsModulus").confidence, 1.0);
  ASSERT_FALSE(r.warnings.empty());
  EXPECT_NE(r.warnings[0].find("youngsModulus"), std::string::npos);
  const PropertyReport low = parse_property_report(elastic_reply(-0.5, 0.9));
  EXPECT_EQ(low.attributes.at("youngsModulus").confidence, 0.0);
}

TEST(Parse, MissingConfidenceCountsAsZero) {
  const PropertyReport r = parse_property_report(
      R"({"material": "sand", "material_confidence": 1, "mass": 3, "mass_confidence": 1,
          "density": 1600, "density_confidence": 1, "frictionAngle": 30})");
  EXPECT_EQ(r.attributes.at("frictionAngle").confidence, 0.0);
  EXPECT_EQ(low_confidence_mask(r, 0.5), std::set<std::string>{"frictionAngle"});
  EXPECT_FALSE(r.warnings.empty());
}

TEST(Parse, SchemaAndParseErrors) {
  EXPECT_THROW(parse_property_report("I cannot tell."), ParseError);
  EXPECT_THROW(parse_property_report(R"({"material": "elastic", "mass": 1, "density": 2})"), SchemaError);
  EXPECT_THROW(parse_property_report(R"({"material": "jelly", "mass": 1})"), SchemaError);
  EXPECT_THROW(parse_property_report(R"({"material": "sand", "mass": "heavy", "density": 1, "frictionAngle": 3})"),
               SchemaError);
  EXPECT_THROW(parse_property_report(R"({"mass": 1})"), SchemaError);
  try {
    parse_property_report(R"({"material": "plasticine", "mass": 1})");
    FAIL();
  } catch (const SchemaError& e) {
    const std::string m = e.what();
    for (const char* name : {"density", "youngsModulus", "poissonsRatio", "yieldStress"}) {
      EXPECT_NE(m.find(name), std::string::npos) << name;
    }
  }
}

TEST(Parse, EmptyReports) {
  for (const char* text : {"[]", R"({"objects": []})", R"({"movable": false})", "```json\n{\"classes\": []}\n```"}) {
    EXPECT_TRUE(parse_property_report(text).empty) << text;
  }
  const PropertyReport r = parse_property_report("[]");
  EXPECT_TRUE(r.confidences().empty());
  EXPECT_TRUE(low_confidence_mask(r, 0.8).empty());
}

TEST(Parse, FuzzedInputOnlyThrowsLibraryErrors) {
  std::mt19937_64 rng(77);
  const std::string seed = elastic_reply(0.9, 0.9);
  std::uniform_int_distribution<int> byte(0, 255);
  for (int t = 0; t < 2000; ++t) {
    std::string s = seed;
    std::uniform_int_distribution<std::size_t> pos(0, s.size() - 1);
    const int edits = 1 + t % 8;
    for (int e = 0; e < edits; ++e) s[pos(rng)] = static_cast<char>(byte(rng));
    if (t % 3 == 0) s.resize(pos(rng));
    try {
      const PropertyReport r = parse_property_report(s);
      for (const auto& [k, c] : r.confidences()) {
        ASSERT_GE(c, 0.0);
        ASSERT_LE(c, 1.0);
      }
    } catch (const ParseError&) {
    } catch (const SchemaError&) {
    }
  }
}

TEST(Mask, GammaBoundaryIsNotFlagged) {
  const PropertyReport r = parse_property_report(elastic_reply(0.8, 0.79));
  EXPECT_EQ(low_confidence_mask(r, 0.8), std::set<std::string>{"poissonsRatio"});
  // material plus six attributes, all below 1
  EXPECT_EQ(low_confidence_mask(r, 1.0).size(), 7u);
  EXPECT_THROW(low_confidence_mask(r, 0.0), ParameterError);
  EXPECT_THROW(low_confidence_mask(r, 1.01), ParameterError);
}

TEST(Mask, MatchesBruteForceOnRandomReports) {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_real_distribution<double> g(0.01, 1.0);
  for (int t = 0; t < 1000; ++t) {
    PropertyReport r;
    r.material_class = MaterialClass::Elastic;
    r.material_confidence = std::round(u(rng) * 20.0) / 20.0;
    for (std::string_view name : numeric_attributes()) {
      if (u(rng) < 0.6) r.attributes[std::string(name)] = {1.0, std::round(u(rng) * 20.0) / 20.0};
    }
    const double gamma = t % 5 == 0 ? 0.5 : g(rng);
    std::set<std::string> want;
    if (r.material_confidence < gamma) want.insert("material");
    for (const auto& [name, est] : r.attributes) {
      if (est.confidence < gamma) want.insert(name);
    }
    ASSERT_EQ(low_confidence_mask(r, gamma), want);
  }
}

TEST(Loop, ConvergesAtFirstIteration) {
  ScriptedLlm llm({elastic_reply(0.9, 0.9)});
  TranslatingSquareVideo video(6, 0, 3);
  const PerceptionResult r = run_perception(llm, video, input_image(), "a ball bounces", small_options());
  EXPECT_EQ(r.status, PerceptionStatus::Converged);
  EXPECT_EQ(r.videos_generated, 1);
  EXPECT_EQ(r.refinements, 0);
  EXPECT_EQ(r.selected_iteration, 0);
  EXPECT_EQ(llm.calls(), 1u);
  EXPECT_EQ(video.calls(), 1u);
  ASSERT_EQ(r.state.history.size(), 1u);
  EXPECT_EQ(r.state.history[0].frame_indices.size(), 5u);
  // The reasoning query carries the prompt text and the subsampled frames.
  const auto& content = llm.requests()[0].messages.at(0).content;
  std::size_t images = 0;
  for (const auto& part : content) images += part.kind == ContentPart::Kind::Image;
  EXPECT_EQ(images, 5u);
  EXPECT_EQ(content.front().text.rfind(std::string(default_reasoning_prompt()), 0), 0u);
  EXPECT_EQ(llm.requests()[0].model_id, "gpt-4o");
  EXPECT_EQ(llm.requests()[0].temperature, 0.0);
}

TEST(Loop, ConvergesAfterTwoRefinements) {
  ScriptedLlm llm({elastic_reply(0.3, 0.9), "a ball is squeezed", elastic_reply(0.9, 0.5), "a ball bounces high",
                   elastic_reply(0.85, 0.82)});
  TranslatingSquareVideo video(6, 0, 3);
  const PerceptionResult r = run_perception(llm, video, input_image(), "a ball", small_options());
  EXPECT_EQ(r.status, PerceptionStatus::Converged);
  EXPECT_EQ(r.videos_generated, 3);
  EXPECT_EQ(r.refinements, 2);
  EXPECT_EQ(r.selected_iteration, 2);
  ASSERT_EQ(r.state.history.size(), 3u);
  EXPECT_EQ(r.state.history[0].flagged, std::set<std::string>{"youngsModulus"});
  EXPECT_EQ(r.state.history[1].prompt, "a ball is squeezed");
  EXPECT_EQ(r.state.history[2].prompt, "a ball bounces high");
  EXPECT_EQ(r.state.prompt, "a ball bounces high");
  EXPECT_EQ(r.report.attributes.at("poissonsRatio").confidence, 0.82);
}

TEST(Loop, BudgetExhaustedKeepsFewestFlaggedLatestOnTies) {
  // flagged counts: 2, 1, 2, 1 -> iteration 3 wins the tie with iteration 1
  ScriptedLlm llm({elastic_reply(0.1, 0.1), "p1", elastic_reply(0.9, 0.1), "p2", elastic_reply(0.2, 0.2), "p3",
                   elastic_reply(0.1, 0.95)});
  TranslatingSquareVideo video(6, 0, 3);
  const PerceptionResult r = run_perception(llm, video, input_image(), "p0", small_options());
  EXPECT_EQ(r.status, PerceptionStatus::BudgetExhausted);
  EXPECT_EQ(r.videos_generated, 4);
  EXPECT_EQ(r.refinements, 3);
  EXPECT_EQ(r.selected_iteration, 3);
  EXPECT_EQ(r.report.attributes.at("poissonsRatio").confidence, 0.95);
  EXPECT_EQ(llm.calls(), 7u);
}

TEST(Loop, MaxIterationsBoundsVideos) {
  for (int n : {1, 2, 5}) {
    std::vector<std::string> script;
    for (int t = 0; t <= n; ++t) {
      script.push_back(elastic_reply(0.1, 0.1));
      script.push_back("again");
    }
    ScriptedLlm llm(script);
    TranslatingSquareVideo video(6, 0, 3);
    PerceptionOptions o = small_options();
    o.max_iterations = n;
    const PerceptionResult r = run_perception(llm, video, input_image(), "p0", o);
    EXPECT_EQ(r.videos_generated, n + 1);
    EXPECT_EQ(r.refinements, n);
    EXPECT_EQ(r.status, PerceptionStatus::BudgetExhausted);
  }
}

TEST(Loop, EmptyReportStopsEarly) {
  ScriptedLlm llm({R"({"objects": []})"});
  TranslatingSquareVideo video(6, 0, 3);
  const PerceptionResult r = run_perception(llm, video, input_image(), "p0", small_options());
  EXPECT_EQ(r.status, PerceptionStatus::EmptyReport);
  EXPECT_TRUE(r.report.empty);
  EXPECT_EQ(r.videos_generated, 1);
  EXPECT_THROW(to_material_params(r.report, {}), PreconditionError);
}

TEST(Loop, ReasoningRetriesOnceThenFails) {
  TranslatingSquareVideo video(6, 0, 3);
  {
    ScriptedLlm llm({"no json here", elastic_reply(0.9, 0.9)});
    const PerceptionResult r = run_perception(llm, video, input_image(), "p0", small_options());
    EXPECT_EQ(r.status, PerceptionStatus::Converged);
    EXPECT_EQ(r.state.history[0].raw_responses.size(), 2u);
  }
  {
    ScriptedLlm llm({"no json here", R"({"material": "elastic"})"});
    std::vector<Image> frames(3, input_image());
    std::vector<std::string> raw;
    try {
      run_three_stage_reasoning(llm, frames, "p0", {}, {}, &raw);
      FAIL() << "expected InferenceError";
    } catch (const InferenceError& e) {
      const std::string m = e.what();
      EXPECT_NE(m.find("no json here"), std::string::npos);
      EXPECT_NE(m.find(R"({"material": "elastic"})"), std::string::npos);
    }
    EXPECT_EQ(raw.size(), 2u);
    EXPECT_EQ(llm.calls(), 2u);
  }
  {
    ScriptedLlm llm({"never parses"});
    EXPECT_THROW(run_perception(llm, video, input_image(), "p0", small_options()), InferenceError);
  }
}

TEST(Loop, UnparseableIterationKeepsPrompt) {
  ScriptedLlm llm({"x", "y", elastic_reply(0.9, 0.9)});
  TranslatingSquareVideo video(6, 0, 3);
  const PerceptionResult r = run_perception(llm, video, input_image(), "p0", small_options());
  EXPECT_EQ(r.status, PerceptionStatus::Converged);
  ASSERT_EQ(r.state.history.size(), 2u);
  EXPECT_FALSE(r.state.history[0].error.empty());
  EXPECT_EQ(r.state.history[1].prompt, "p0");
  EXPECT_EQ(r.refinements, 0);
}

namespace {

class FailingVideo : public VideoClient {
 public:
  VideoResult generate(const VideoRequest&) override { throw AuthError("HTTP 401"); }
};

}  // namespace

TEST(Loop, ClientErrorsCarryIteration) {
  ScriptedLlm llm({elastic_reply(0.9, 0.9)});
  FailingVideo video;
  try {
    run_perception(llm, video, input_image(), "p0", small_options());
    FAIL();
  } catch (const AuthError& e) {
    EXPECT_NE(std::string(e.what()).find("iteration 0"), std::string::npos);
  }
}

TEST(Loop, RejectsBadOptions) {
  ScriptedLlm llm({elastic_reply(0.9, 0.9)});
  TranslatingSquareVideo video(6, 0, 3);
  PerceptionOptions o = small_options();
  o.gamma = 0.0;
  EXPECT_THROW(run_perception(llm, video, input_image(), "p0", o), ParameterError);
  o = small_options();
  o.frames_per_query = 17;
  EXPECT_THROW(run_perception(llm, video, input_image(), "p0", o), ParameterError);
  o = small_options();
  o.max_iterations = 0;
  EXPECT_THROW(run_perception(llm, video, input_image(), "p0", o), ParameterError);
  EXPECT_THROW(run_perception(llm, video, input_image(), "", small_options()), PreconditionError);
  EXPECT_THROW(run_three_stage_reasoning(llm, {}, "p0"), PreconditionError);
}

TEST(Refine, RequestNamesFlaggedAttributesAndHints) {
  EchoLlm echo;
  const PropertyReport r = parse_property_report(elastic_reply(0.9, 0.9));
  const std::string out = refine_prompt(echo, "a ball rests", {"mass"}, r);
  EXPECT_NE(out.find("mass"), std::string::npos);
  EXPECT_NE(out.find("a ball rests"), std::string::npos);
  EXPECT_NE(out.find(std::string(motion_hint("mass"))), std::string::npos);
  EXPECT_NE(std::string(motion_hint("mass")).find("free fall"), std::string::npos);
  EXPECT_EQ(out.find("{{"), std::string::npos);
  EXPECT_THROW(refine_prompt(echo, "p", {}, r), PreconditionError);
}

TEST(Refine, StripsQuotesAndFences) {
  const PropertyReport r = parse_property_report(elastic_reply(0.9, 0.9));
  ScriptedLlm quoted({"  \"A ball falls freely.\"\n"});
  EXPECT_EQ(refine_prompt(quoted, "p", {"mass"}, r), "A ball falls freely.");
  ScriptedLlm fenced({"```\nA ball is thrown.\n```"});
  EXPECT_EQ(refine_prompt(fenced, "p", {"mass"}, r), "A ball is thrown.");
}

TEST(Convert, UnitsAndValidation) {
  const PropertyReport r = parse_property_report(elastic_reply(0.9, 0.9, 36.0));
  const DomainTransform t{0.25, Vec3::Zero()};
  const MaterialAssignment a = to_material_params(r, t);
  EXPECT_NEAR(a.initial_speed_mps, 10.0, 1e-12);
  EXPECT_NEAR(a.initial_speed_domain, 2.5, 1e-12);
  EXPECT_EQ(a.external_force_n, 0.0);
  EXPECT_EQ(a.params.material_class, MaterialClass::Elastic);
  EXPECT_EQ(*a.params.get("youngsModulus"), 1e6);
  EXPECT_DOUBLE_EQ(kmh_to_mps(36.0), 10.0);

  std::string bad = elastic_reply(0.9, 0.9);
  bad.replace(bad.find("0.45"), 4, "0.6");
  try {
    to_material_params(parse_property_report(bad), t);
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("poissonsRatio"), std::string::npos);
  }
}

TEST(Persist, ReportJsonRoundTrip) {
  const PropertyReport r = parse_property_report(elastic_reply(0.7, 1.3));
  const PropertyReport back = property_report_from_json(to_json(r));
  EXPECT_EQ(back.material_class, r.material_class);
  EXPECT_EQ(back.attributes, r.attributes);
  EXPECT_EQ(back.material_confidence, r.material_confidence);
  EXPECT_EQ(back.warnings, r.warnings);
  EXPECT_EQ(back.raw_response, r.raw_response);

  const auto dir = scratch_dir("report_file");
  ScriptedLlm llm({elastic_reply(0.9, 0.9)});
  TranslatingSquareVideo video(6, 0, 3);
  const PerceptionResult pr = run_perception(llm, video, input_image(), "p0", small_options());
  {
    std::ofstream out(dir / "full.json");
    out << to_json(pr).dump(2);
  }
  {
    std::ofstream out(dir / "bare.json");
    out << to_json(r).dump(2);
  }
  EXPECT_EQ(load_report_file(dir / "full.json").attributes, pr.report.attributes);
  EXPECT_EQ(load_report_file(dir / "bare.json").attributes, r.attributes);
  EXPECT_EQ(to_json(pr)["status"], "converged");
}

TEST(Prompts, AssetsLoadFromDisk) {
  const auto dir = scratch_dir("prompt_assets");
  {
    std::ofstream out(dir / "r.txt");
    out << "custom reasoning";
  }
  const PromptAssets a = PromptAssets::load(dir / "r.txt", std::nullopt);
  EXPECT_EQ(a.reasoning, "custom reasoning");
  EXPECT_EQ(a.refinement, default_refinement_template());
  EXPECT_THROW(PromptAssets::load(dir / "missing.txt", std::nullopt), IoError);
  // The bundled reasoning prompt is the file shipped in assets/.
  std::ifstream in(gaussmpm::testing::source_dir() / "assets/prompts/physics_reasoning.txt");
  const std::string shipped((std::istreambuf_iterator<char>(in)), {});
  EXPECT_EQ(shipped, default_reasoning_prompt());
}
