#pragma once

#include <stdexcept>
#include <string>

namespace dscene {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

#define DSCENE_DEFINE_ERROR(Name)                                    \
    struct Name : Error {                                            \
        Name() : Error(#Name) {}                                     \
        explicit Name(const std::string& msg) : Error(std::string(#Name) + ": " + msg) {} \
    }

DSCENE_DEFINE_ERROR(IoError);
DSCENE_DEFINE_ERROR(AllPixelsMissing);
DSCENE_DEFINE_ERROR(DegenerateScene);
DSCENE_DEFINE_ERROR(NoFloorFound);
DSCENE_DEFINE_ERROR(InsufficientData);
DSCENE_DEFINE_ERROR(NonPartition);
DSCENE_DEFINE_ERROR(NoValidSeed);
DSCENE_DEFINE_ERROR(TooFewPoints);
DSCENE_DEFINE_ERROR(RankDeficient);
DSCENE_DEFINE_ERROR(DimensionMismatch);
DSCENE_DEFINE_ERROR(DegenerateRegion);
DSCENE_DEFINE_ERROR(NoHypotheses);
DSCENE_DEFINE_ERROR(TooManyHypotheses);
DSCENE_DEFINE_ERROR(GridMismatch);
DSCENE_DEFINE_ERROR(SizeMismatch);
DSCENE_DEFINE_ERROR(InvalidSpec);
DSCENE_DEFINE_ERROR(EmptyTrainingSet);

#undef DSCENE_DEFINE_ERROR

/// Wraps a stage failure with the name of the pipeline stage that raised it.
struct StageError : Error {
    std::string stage;
    StageError(const std::string& stage_name, const std::string& msg)
        : Error("[" + stage_name + "] " + msg), stage(stage_name) {}
};

}  // namespace dscene
