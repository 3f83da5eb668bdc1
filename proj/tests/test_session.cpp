#include "exo/scenario.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace exo;

namespace {

const SubjectProfile& subject() {
    static const SubjectProfile s = sample_population(2, 5)[0];
    return s;
}

const EpisodeLog& own_walk() {
    static const EpisodeLog log = walk_episode(default_setup(), subject(), Task::walk, subject_model(subject(), Task::walk), 6, 1);
    return log;
}

}  // namespace

TEST(Session, OwnGaitIsTrackedClosely) {
    const EpisodeLog& log = own_walk();
    ASSERT_GT(log.size(), 100u);
    double se = 0.0;
    int n = 0;
    for (std::size_t k = log.size() / 2; k < log.size(); ++k)
        for (int i = 0; i < 2; ++i) {
            se += std::pow(log.at(log.q_d, k, i) - log.at(log.q, k, i), 2);
            ++n;
        }
    EXPECT_LT(rad2deg(std::sqrt(se / n)), 2.0);
    for (int sat : log.saturated) EXPECT_EQ(sat, 0);
}

TEST(Session, LogsOneStrikePerGaitBoundary) {
    const EpisodeLog& log = own_walk();
    // The wrap that ends the last gait falls after the final sample.
    EXPECT_EQ(log.strike_indices().size(), 5u);
    const auto [b, e] = gait_range(log, 3);
    EXPECT_LT(b, e);
    EXPECT_NEAR((e - b) * log.dt, 1.0 / subject().cadence, 2 * log.dt);
    EXPECT_THROW(gait_range(log, 9), std::out_of_range);
}

TEST(Session, LogRateAndDuration) {
    const EpisodeLog& log = own_walk();
    EXPECT_DOUBLE_EQ(log.dt, 0.01);
    EXPECT_NEAR(log.t.back(), 6.0 / subject().cadence, 0.01);
    EXPECT_EQ(log.q.size(), 2 * log.size());
    EXPECT_EQ(log.s.size(), log.size());
}

TEST(Session, CsvRoundTrip) {
    const EpisodeLog& log = own_walk();
    std::stringstream ss;
    log.write_csv(ss);
    const auto rows = csv::read_rows(ss);
    csv::Table tab;
    tab.columns = rows.front();
    tab.rows.assign(rows.begin() + 1, rows.end());
    const EpisodeLog back = EpisodeLog::from_table(tab);
    ASSERT_EQ(back.size(), log.size());
    EXPECT_EQ(back.joints, 2);
    EXPECT_EQ(back.heel_strike, log.heel_strike);
    for (std::size_t k = 0; k < log.q.size(); ++k) {
        EXPECT_NEAR(back.q[k], log.q[k], 1e-12);
        EXPECT_NEAR(back.tau_hat[k], log.tau_hat[k], 1e-9);
    }
}

TEST(Session, SameSeedSameEpisode) {
    const auto a = walk_episode(default_setup(), subject(), Task::walk, normative_model(Task::walk), 3, 4);
    const auto b = walk_episode(default_setup(), subject(), Task::walk, normative_model(Task::walk), 3, 4);
    EXPECT_EQ(a.q, b.q);
    EXPECT_EQ(a.tau_hat, b.tau_hat);
}

TEST(Session, ObserverTracksInteractionTorque) {
    const EpisodeLog log = walk_episode(default_setup(), subject(), Task::walk, normative_model(Task::walk), 4, 2);
    double err = 0.0, mag = 0.0;
    for (std::size_t k = log.size() / 2; k < log.size(); ++k)
        for (int i = 0; i < 2; ++i) {
            err += std::pow(log.at(log.tau_hat, k, i) - log.at(log.tau_e, k, i), 2);
            mag += std::pow(log.at(log.tau_e, k, i), 2);
        }
    EXPECT_LT(std::sqrt(err / mag), 0.1);
}

TEST(Session, ConflictRaisesInteractionTorque) {
    Rng rng(3);
    const double len = 8.0 / subject().cadence;
    const auto events = conflict_schedule(len, ConflictKind::asynchronization, 1.0, 1, 2.0, rng);
    ASSERT_EQ(events.size(), 1u);
    EXPECT_GE(events[0].onset, 3.0);
    const DmpModel m = subject_model(subject(), Task::walk);
    const auto clean = walk_episode(default_setup(), subject(), Task::walk, m, 8, 1);
    const auto conf = walk_episode(default_setup(), subject(), Task::walk, m, 8, 1, events);
    auto energy = [&](const EpisodeLog& log) {
        double e = 0.0;
        for (std::size_t k = 0; k < log.size(); ++k)
            if (events[0].active(log.t[k]))
                for (int i = 0; i < 2; ++i) e += std::pow(log.at(log.tau_e, k, i), 2);
        return e;
    };
    EXPECT_GT(energy(conf), 4.0 * energy(clean));
}

TEST(Session, ScheduleRejectsCrowdedEpisode) {
    Rng rng(1);
    EXPECT_THROW(conflict_schedule(6.0, ConflictKind::imbalance, 0.5, 2, 2.0, rng), std::invalid_argument);
}

TEST(Session, RejectsDiscreteTask) {
    EXPECT_THROW(WalkSession(default_setup(), subject(), Task::squat), std::invalid_argument);
}
