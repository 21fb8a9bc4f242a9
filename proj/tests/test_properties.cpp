#include <gtest/gtest.h>

#include "properties.hpp"

using namespace property_checks;

TEST(Properties, PartitionOfUnity) { EXPECT_EQ(partition_of_unity(), ""); }
TEST(Properties, PenaltyNullSpace) { EXPECT_EQ(penalty_null_space(), ""); }
TEST(Properties, KernelMonotoneAndUnitAtZero) { EXPECT_EQ(kernel_properties(), ""); }
TEST(Properties, OmegaPermutationSymmetry) { EXPECT_EQ(omega_permutation_symmetry(), ""); }
TEST(Properties, CenteringIdempotence) { EXPECT_EQ(centering_idempotence(), ""); }
TEST(Properties, PredictionDeterminism) { EXPECT_EQ(prediction_determinism(), ""); }
TEST(Properties, ModelRoundTrip) { EXPECT_EQ(model_round_trip(), ""); }
TEST(Properties, BlockPermutationInvariance) { EXPECT_EQ(block_permutation_invariance(), ""); }

TEST(Properties, OtherSeedsToo) {
  for (std::uint64_t s = 10; s < 13; ++s) {
    EXPECT_EQ(partition_of_unity(20, s), "");
    EXPECT_EQ(kernel_properties(10, s), "");
    EXPECT_EQ(omega_permutation_symmetry(10, s), "");
  }
}
