#pragma once

#include "mddt/cohort.hpp"

namespace mddt::testing {

// The participant described in the worked narrative example.
inline ParticipantRecord worked_example_record() {
  ParticipantRecord r;
  r.id = "EX0001";
  r.label = Label::HC;
  r.set("age", 60.0);
  r.set("sex", std::string("female"));
  r.set("bmi", 24.5);
  r.set("sleeplessness", std::string("sometimes"));
  r.set("sleep_duration", 6.0);
  r.set("alcohol_frequency", std::string("three_four_weekly"));
  r.set("self_harm", std::string("no"));
  r.set("employment", std::string("employed"));
  r.set("income", 45000.0);
  r.set("working_week", 38.0);
  r.set("education", std::string("o_levels"));
  r.set("long_standing_illness", std::string("no"));
  r.set("hdl", 2.08);
  r.set("ldl", 2.61);
  r.set("total_cholesterol", 4.78);
  r.set("triglycerides", 1.33);
  return r;
}

inline constexpr const char* kWorkedExampleNarrative =
    "The participant is a 60-year-old female with a body mass index (BMI) of "
    "24.5 kg/m². She experiences occasional sleeplessness and typically "
    "sleeps six hours per night. She consumes alcohol about three times per "
    "week and has no history of self-harm. She is employed in paid work, "
    "earning £45,000 annually, and works 38 hours per week. Her highest "
    "education level is O-levels, and she does not have any long-standing "
    "illnesses. Clinically, her HDL cholesterol is 2.08 mmol/L, LDL "
    "cholesterol is 2.61 mmol/L, total cholesterol is 4.78 mmol/L, and "
    "triglycerides are 1.33 mmol/L.";

// Published comparison table: method, ACC, F1, AUC, SPE, SENS, PPV, NPV.
struct MethodTableRow {
  const char* method;
  double acc, f1, auc, spe, sens, ppv, npv;
};

inline constexpr MethodTableRow kMethodTable[] = {
    {"SVM", 0.6794, 0.6517, 0.7463, 0.6958, 0.6596, 0.6438, 0.7106},
    {"RF", 0.6883, 0.6341, 0.7369, 0.7662, 0.5947, 0.6791, 0.6943},
    {"LightGBM", 0.7091, 0.6707, 0.7693, 0.7572, 0.6516, 0.6908, 0.7231},
    {"XGBoost", 0.7068, 0.6704, 0.7497, 0.7501, 0.6554, 0.6858, 0.7233},
    {"CatBoost", 0.7117, 0.6717, 0.7751, 0.7642, 0.6486, 0.6961, 0.7232},
    {"MLP", 0.6869, 0.6301, 0.7522, 0.7692, 0.5877, 0.6793, 0.6916},
    {"ResNet1D", 0.7077, 0.6644, 0.7654, 0.7669, 0.6369, 0.6945, 0.7173},
    {"LLaMA3.1 8B", 0.6167, 0.5229, 0.6387, 0.7452, 0.4625, 0.6013, 0.6249},
    {"Qwen2.5 7B", 0.6409, 0.5852, 0.6532, 0.7593, 0.5411, 0.6182, 0.6483},
    {"MDD-LLM 8B", 0.7919, 0.7642, 0.8579, 0.8039, 0.7763, 0.7524, 0.8241},
    {"CoT-tuned 7B", 0.8268, 0.8081, 0.8803, 0.8229, 0.8291, 0.7838, 0.8614},
};

}  // namespace mddt::testing
