#include "exo/pipeline.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

using namespace exo;

namespace {

ExperimentConfig tiny_config() {
    return parse_config(R"({
  "schema_version": 1,
  "scenario": "tiny",
  "data": {"subjects": 4, "detector_subjects": 2, "clean_gaits": 6, "conflict_gaits": 10,
           "conflicts_per_episode": 1, "conflict_duration": 2.0},
  "vae": {"epochs": 2, "hidden": 8},
  "translator": {"epochs": 20},
  "hil": {"subjects": 1, "iterations": 3}
})");
}

fs::path fresh_dir(const std::string& name) {
    const fs::path p = fs::path(testing::TempDir()) / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = slurp(e.path());
    return out;
}

}  // namespace

TEST(Pipeline, StagesRequireTheirInputs) {
    const fs::path dir = fresh_dir("pipeline_empty");
    const Pipeline p(tiny_config(), dir, 1);
    EXPECT_THROW(p.eval(), DependencyError);
    EXPECT_THROW(p.train_vae(), DependencyError);
    EXPECT_THROW(p.train_translator(), DependencyError);
    EXPECT_THROW(p.hil(), DependencyError);
    EXPECT_THROW(p.translate(), DependencyError);
}

TEST(Pipeline, SeedDerivationSeparatesStreams) {
    EXPECT_NE(derive_seed(1, kSeedPopulation), derive_seed(1, kSeedClean));
    EXPECT_NE(derive_seed(1, kSeedHil, 0), derive_seed(1, kSeedHil, 1));
    EXPECT_EQ(derive_seed(5, kSeedVae, 2), derive_seed(5, kSeedVae, 2));
}

TEST(Pipeline, ParallelForCoversEveryIndexOnce) {
    std::vector<int> hits(37, 0);
    parallel_for(37, 4, [&](int i) { ++hits[static_cast<std::size_t>(i)]; });
    for (int h : hits) EXPECT_EQ(h, 1);
}

// Every stage end to end on a tiny configuration; outputs must not depend on the job count.
TEST(Pipeline, EndToEndIsDeterministicAcrossJobCounts) {
    const ExperimentConfig cfg = tiny_config();
    std::map<std::string, std::string> runs[2];
    for (int jobs : {1, 2}) {
        const fs::path dir = fresh_dir("pipeline_j" + std::to_string(jobs));
        const Pipeline p(cfg, dir, jobs);
        p.gen_data();
        p.train_vae();
        p.train_translator();
        p.hil();
        p.translate();
        p.eval();
        std::ostringstream console;
        p.report(console);
        EXPECT_FALSE(console.str().empty());
        runs[jobs - 1] = snapshot(dir);
    }
    ASSERT_FALSE(runs[0].empty());
    EXPECT_EQ(runs[0].size(), runs[1].size());
    for (const auto& [name, bytes] : runs[0]) {
        ASSERT_TRUE(runs[1].count(name)) << name;
        EXPECT_TRUE(runs[1].at(name) == bytes) << name << " differs between --jobs 1 and 2";
    }
    const Pipeline p(cfg, fs::path(testing::TempDir()) / "pipeline_j1", 1);
    EXPECT_TRUE(fs::exists(p.population_file()));
    EXPECT_TRUE(fs::exists(p.vae_file(Modality::multimodal)));
    EXPECT_TRUE(fs::exists(p.translator_file(Task::squat)));
    EXPECT_TRUE(fs::exists(p.hil_file(0)));
    EXPECT_EQ(slurp(p.population_file()).rfind(p.header(), 0), 0u);
}

TEST(Pipeline, DifferentSeedChangesData) {
    ExperimentConfig a = tiny_config(), b = tiny_config();
    b.seed = 2;
    const fs::path da = fresh_dir("pipeline_seed1"), db = fresh_dir("pipeline_seed2");
    Pipeline(a, da, 1).gen_data();
    Pipeline(b, db, 1).gen_data();
    EXPECT_NE(slurp(da / "population.csv"), slurp(db / "population.csv"));
}
