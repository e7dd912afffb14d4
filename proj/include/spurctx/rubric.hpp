#pragma once

#include <array>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace spurctx {

// One scored dimension of instructional quality. The seven dimensions come
// from the CLASS (1-7 scales) and MQI (1-3 scales) observation frameworks.
struct RubricDimension {
    std::string id;           // CLBM, CLINSTD, CLPC, EXPL, LANGIMP, REMED, SMQR
    std::string display_name; // used in the rating instruction
    int scale_min = 1;
    int scale_max = 7;
    std::string rubric_text;

    int scale_span() const { return scale_max - scale_min; }
    bool in_scale(int score) const { return score >= scale_min && score <= scale_max; }
};

inline const std::vector<RubricDimension>& rubric_catalog() {
    static const std::vector<RubricDimension> catalog = {
        {"CLBM", "classroom management", 1, 7,
         "Behavior management encompasses the teacher's use of effective methods to encourage "
         "desirable behavior and prevent and re-direct misbehavior."},
        {"CLINSTD", "instructional support", 1, 7,
         "Instructional dialogue captures the purposeful use of content-focused discussion among "
         "teachers and students that is cumulative, with the teacher supporting students to chain "
         "ideas together in ways that lead to deeper understanding of content. Students take an "
         "active role in these dialogues and both the teacher and students use strategies that "
         "facilitate extended dialogue."},
        {"CLPC", "positive climate", 1, 7,
         "Positive climate reflects the emotional connection and relationships among teachers and "
         "students, and the warmth, respect, and enjoyment communicated by verbal and non-verbal "
         "interactions."},
        {"EXPL", "quality of mathematical explanations", 1, 3,
         "Mathematical explanations focus on the why, eg. why a procedure works, why a solution "
         "method is (in)appropriate, why an answer is true or not true, etc. Do not count 'how', "
         "eg. description of the steps, or definitions unless meaning is also attached."},
        {"LANGIMP", "imprecision in language or notation", 1, 3,
         "The teacher's imprecision in language or notation refers to problematic uses of "
         "mathematical language or notation. For example, errors in notation (eg. mathematical "
         "symbols), in mathematical language (eg. technical mathematical terms like \"equation\") "
         "or general language (eg. explaining mathematical ideas or procedures in non-technical "
         "terms). Do not count errors that are noticed and corrected within the segment."},
        {"REMED", "remediation of student errors", 1, 3,
         "Rate the teacher's degree of remediation of student errors and difficulties on a scale "
         "of 1-3 (low-high). This means that the teacher gets at the root of student "
         "misunderstanding, rather than repairing just the procedure or fact. This is more than a "
         "simple correction of a student mistake."},
        {"SMQR", "student engagement", 1, 3,
         "Student mathematical questioning and reasoning means that students engage in "
         "mathematical thinking. Examples include but are not limited to: Students provide "
         "counter-claims in response to a proposed mathematical statement or idea, ask "
         "mathematically motivated questions requesting explanations, make conjectures about the "
         "mathematics discussed in the lesson, etc."},
    };
    return catalog;
}

inline const RubricDimension* find_dimension(std::string_view id) {
    for (const auto& d : rubric_catalog())
        if (d.id == id) return &d;
    return nullptr;
}

inline const RubricDimension& dimension_or_throw(std::string_view id) {
    const RubricDimension* d = find_dimension(id);
    if (!d) throw std::invalid_argument("unknown rubric dimension: " + std::string(id));
    return *d;
}

inline std::vector<std::string> dimension_ids() {
    std::vector<std::string> ids;
    for (const auto& d : rubric_catalog()) ids.push_back(d.id);
    return ids;
}

}  // namespace spurctx
