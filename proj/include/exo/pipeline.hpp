#pragma once

// Subcommands of the experiment pipeline. Each reads its inputs from the output
// directory, writes its artifacts there, and fails with DependencyError when an
// upstream artifact is missing. Every file starts with the provenance header.
//
//   gen-data          population.csv, conflicts.csv, episodes/*.csv
//   train-vae         vae_<modality>.bin, vae_training.csv
//   train-translator  translator_<task>.bin, translator_training.csv
//   hil               hil_s<id>.csv, wstar_s<id>.csv
//   translate         translated_s<id>_<task>.csv
//   eval              auc.csv, roc.csv, translator_results.csv, translated_rmse.csv, hil_summary.csv
//   report            report.csv

#include "exo/anomaly.hpp"
#include "exo/config.hpp"
#include "exo/hil.hpp"
#include "exo/scenario.hpp"
#include "exo/translator.hpp"

#include <atomic>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <thread>

namespace exo {

class DependencyError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace fs = std::filesystem;

/// SplitMix64 of (seed, tag, index): independent streams for each pipeline stage.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag, std::uint64_t index = 0) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (tag + 1) + 0xBF58476D1CE4E5B9ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// Runs fn(0..n-1) on up to `jobs` threads; rethrows the lowest-index failure.
inline void parallel_for(int n, int jobs, const std::function<void(int)>& fn) {
    if (jobs <= 1 || n <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
    std::vector<std::thread> pool;
    for (int w = 0; w < std::min(jobs, n); ++w)
        pool.emplace_back([&] {
            for (int i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    errors[static_cast<std::size_t>(i)] = std::current_exception();
                }
            }
        });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

inline constexpr std::array<Modality, 3> kModalities = {Modality::multimodal, Modality::torque_only, Modality::phase_only};
inline constexpr std::array<Task, 4> kTargetTasks = {Task::stairs_up, Task::stairs_down, Task::squat, Task::stand};
inline constexpr std::array<ConflictKind, 2> kConflictKinds = {ConflictKind::asynchronization, ConflictKind::imbalance};

enum SeedTag : std::uint64_t { kSeedPopulation = 1, kSeedClean, kSeedConflict, kSeedVae, kSeedTranslator, kSeedHil };

class Pipeline {
public:
    Pipeline(ExperimentConfig cfg, fs::path out, int jobs) : cfg_(std::move(cfg)), out_(std::move(out)), jobs_(std::max(1, jobs)) {
        cfg_.validate();
        header_ = csv::header_line(cfg_.hash(), cfg_.seed);
    }

    const ExperimentConfig& config() const { return cfg_; }
    const fs::path& out() const { return out_; }
    const std::string& header() const { return header_; }

    // --- file names ---
    fs::path population_file() const { return out_ / "population.csv"; }
    fs::path conflicts_file() const { return out_ / "conflicts.csv"; }
    fs::path clean_file(int id) const { return out_ / "episodes" / ("clean_s" + std::to_string(id) + ".csv"); }
    fs::path conflict_file(int id, ConflictKind k) const {
        return out_ / "episodes" / ("conflict_s" + std::to_string(id) + "_" + to_string(k) + ".csv");
    }
    fs::path vae_file(Modality m) const { return out_ / (std::string("vae_") + to_string(m) + ".bin"); }
    fs::path translator_file(Task t) const { return out_ / (std::string("translator_") + task_name(t) + ".bin"); }
    fs::path hil_file(int id) const { return out_ / ("hil_s" + std::to_string(id) + ".csv"); }
    fs::path wstar_file(int id) const { return out_ / ("wstar_s" + std::to_string(id) + ".csv"); }
    fs::path translated_file(int id, Task t) const {
        return out_ / ("translated_s" + std::to_string(id) + "_" + task_name(t) + ".csv");
    }

    // --- subcommands ---

    void gen_data() const {
        const auto& d = cfg_.data;
        const auto pop = sample_population(d.subjects, derive_seed(cfg_.seed, kSeedPopulation), cfg_.population);
        fs::create_directories(out_ / "episodes");
        write_file(population_file(), [&](std::ostream& os) { write_population(os, pop); });

        const SessionSetup setup = cfg_.setup();
        // Conflict schedules are drawn up front so that they do not depend on --jobs.
        const int n_eval = d.eval_subjects();
        std::vector<std::vector<ConflictEvent>> schedules;
        for (int i = 0; i < n_eval; ++i)
            for (std::size_t k = 0; k < kConflictKinds.size(); ++k) {
                Rng rng(derive_seed(cfg_.seed, kSeedConflict, static_cast<std::uint64_t>(i) * 2 + k));
                const double length = d.conflict_gaits / pop[static_cast<std::size_t>(i)].cadence;
                schedules.push_back(conflict_schedule(length, kConflictKinds[k], d.severity, d.conflicts_per_episode,
                                                      d.conflict_duration, rng));
            }
        write_file(conflicts_file(), [&](std::ostream& os) {
            os << "subject_id,kind,onset_s,duration_s,severity\n";
            for (int i = 0; i < n_eval; ++i)
                for (std::size_t k = 0; k < kConflictKinds.size(); ++k)
                    for (const auto& e : schedules[static_cast<std::size_t>(i) * 2 + k])
                        os << i << ',' << to_string(e.kind) << ',' << csv::num(e.onset) << ',' << csv::num(e.duration) << ','
                           << csv::num(e.severity) << '\n';
        });

        const int n_jobs = d.subjects - n_eval + 2 * n_eval;
        parallel_for(n_jobs, jobs_, [&](int j) {
            if (j < d.subjects - n_eval) {
                const int id = n_eval + j;
                const auto& p = pop[static_cast<std::size_t>(id)];
                const EpisodeLog log = walk_episode(setup, p, Task::walk, subject_model(p, Task::walk, cfg_.dmp), d.clean_gaits,
                                                    derive_seed(cfg_.seed, kSeedClean, static_cast<std::uint64_t>(id)));
                write_file(clean_file(id), [&](std::ostream& os) { log.write_csv(os); });
            } else {
                const int e = j - (d.subjects - n_eval);
                const int id = e / 2;
                const auto& p = pop[static_cast<std::size_t>(id)];
                const EpisodeLog log = walk_episode(setup, p, Task::walk, subject_model(p, Task::walk, cfg_.dmp), d.conflict_gaits,
                                                    derive_seed(cfg_.seed, kSeedClean, 1000 + static_cast<std::uint64_t>(e)),
                                                    schedules[static_cast<std::size_t>(e)]);
                write_file(conflict_file(id, kConflictKinds[static_cast<std::size_t>(e % 2)]), [&](std::ostream& os) { log.write_csv(os); });
            }
        });
    }

    void train_vae() const {
        const auto& d = cfg_.data;
        std::vector<EpisodeLog> logs;
        for (int id = d.eval_subjects(); id < d.subjects; ++id) logs.push_back(read_episode(clean_file(id), "gen-data"));
        std::vector<nn::TrainResult> curves(kModalities.size());
        parallel_for(static_cast<int>(kModalities.size()), jobs_, [&](int m) {
            WindowSpec spec = cfg_.window;
            spec.modality = kModalities[static_cast<std::size_t>(m)];
            VaeConfig vc = cfg_.vae;
            vc.train.seed = derive_seed(cfg_.seed, kSeedVae, static_cast<std::uint64_t>(m));
            VaeTraining tr = train_detector(logs, spec, vc);
            save_vae(vae_file(spec.modality).string(), tr.model, header_);
            curves[static_cast<std::size_t>(m)] = std::move(tr.curve);
        });
        write_file(out_ / "vae_training.csv", [&](std::ostream& os) {
            os << "modality,epoch,loss\n";
            for (std::size_t m = 0; m < kModalities.size(); ++m)
                for (std::size_t e = 0; e < curves[m].loss_curve.size(); ++e)
                    os << to_string(kModalities[m]) << ',' << e + 1 << ',' << csv::num(curves[m].loss_curve[e]) << '\n';
        });
    }

    void train_translator() const {
        const auto pop = read_population_file();
        std::vector<nn::TrainResult> curves(kTargetTasks.size());
        parallel_for(static_cast<int>(kTargetTasks.size()), jobs_, [&](int k) {
            const Task task = kTargetTasks[static_cast<std::size_t>(k)];
            const TranslationDataset ds = build_translation_dataset(pop, task, cfg_.dmp);
            const Translator t = fit_translator(ds.X, ds.Y, TranslatorMethod::nn, translator_config(task));
            save_translator(translator_file(task).string(), t, task, header_);
            curves[static_cast<std::size_t>(k)] = t.curve;
        });
        write_file(out_ / "translator_training.csv", [&](std::ostream& os) {
            os << "task,epoch,loss\n";
            for (std::size_t k = 0; k < kTargetTasks.size(); ++k)
                for (std::size_t e = 0; e < curves[k].loss_curve.size(); ++e)
                    os << task_name(kTargetTasks[k]) << ',' << e + 1 << ',' << csv::num(curves[k].loss_curve[e]) << '\n';
        });
    }

    void hil() const {
        const auto pop = read_population_file();
        const VaeModel detector = read_vae(cfg_.window.modality, "train-vae");
        const DmpModel base = normative_model(Task::walk, cfg_.dmp);
        const VectorXd x0 = base.W.row(0).transpose();
        parallel_for(cfg_.hil.subjects, jobs_, [&](int id) {
            const auto& p = pop.at(static_cast<std::size_t>(id));
            SubjectEvaluator ev{cfg_.setup(), p, base, calibrate_frequency(p), cfg_.hil.gaits, cfg_.cost(), detector,
                                derive_seed(cfg_.seed, kSeedHil, static_cast<std::uint64_t>(id))};
            const HilResult r = hil_optimize(x0, std::cref(ev), cfg_.hil.loop, derive_seed(cfg_.seed, kSeedHil, 1000 + static_cast<std::uint64_t>(id)));
            write_file(hil_file(id), [&](std::ostream& os) { write_hil_trace(os, r); });
            write_file(wstar_file(id), [&](std::ostream& os) { write_dmp(os, ev.model_for(r.best)); });
        });
    }

    void translate() const {
        std::vector<LoadedTranslator> translators;
        for (Task t : kTargetTasks) {
            require(translator_file(t), "train-translator");
            translators.push_back(load_translator(translator_file(t).string()));
        }
        for (int id = 0; id < cfg_.hil.subjects; ++id) {
            const DmpModel wstar = read_dmp_file(wstar_file(id), "hil");
            const VectorXd x = template_vector(wstar);
            for (const auto& lt : translators) {
                const DmpModel m = model_from_template(normative_model(lt.task, cfg_.dmp), lt.translator.predict(x));
                write_file(translated_file(id, lt.task), [&](std::ostream& os) { write_dmp(os, m); });
            }
        }
    }

    void eval() const {
        const auto pop = read_population_file();
        eval_detectors();
        eval_translators(pop);
        eval_hil(pop);
    }

    /// Summary table from eval outputs only.
    void report(std::ostream& console) const {
        const csv::Table auc = read_table(out_ / "auc.csv", "eval");
        const csv::Table tr = read_table(out_ / "translator_results.csv", "eval");
        const csv::Table moved = read_table(out_ / "translated_rmse.csv", "eval");
        const csv::Table hil = read_table(out_ / "hil_summary.csv", "eval");
        std::vector<std::array<std::string, 3>> rows;
        for (std::size_t r = 0; r < auc.rows.size(); ++r)
            rows.push_back({"detector", "auc_" + auc.rows[r][static_cast<std::size_t>(auc.column("modality"))], csv::num(auc.value(r, "auc"))});
        for (Task t : kTargetTasks)
            for (const char* method : {"nn", "ridge"}) {
                double sum = 0.0;
                int n = 0;
                for (std::size_t r = 0; r < tr.rows.size(); ++r)
                    if (tr.rows[r][static_cast<std::size_t>(tr.column("task"))] == task_name(t) &&
                        tr.rows[r][static_cast<std::size_t>(tr.column("method"))] == method) {
                        sum += tr.value(r, "rmse_deg");
                        ++n;
                    }
                if (n > 0) rows.push_back({"translator", std::string("loocv_rmse_deg_") + task_name(t) + "_" + method, csv::num(sum / n)});
            }
        for (const char* method : {"hil_translated", "normative"}) {
            double sum = 0.0;
            int n = 0;
            for (std::size_t r = 0; r < moved.rows.size(); ++r)
                if (moved.rows[r][static_cast<std::size_t>(moved.column("method"))] == method) {
                    sum += moved.value(r, "rmse_deg");
                    ++n;
                }
            if (n > 0) rows.push_back({"translate", std::string("mean_rmse_deg_") + method, csv::num(sum / n)});
        }
        for (std::size_t r = 0; r < hil.rows.size(); ++r) {
            const std::string id = hil.rows[r][static_cast<std::size_t>(hil.column("subject_id"))];
            rows.push_back({"hil", "cost_ratio_s" + id, csv::num(hil.value(r, "ratio"))});
            rows.push_back({"hil", "halvings_s" + id, csv::num(hil.value(r, "halvings"))});
        }
        write_file(out_ / "report.csv", [&](std::ostream& os) {
            os << "section,metric,value\n";
            for (const auto& row : rows) os << row[0] << ',' << row[1] << ',' << row[2] << '\n';
        });
        for (const auto& row : rows) console << row[0] << "  " << row[1] << " = " << csv::num6(csv::to_double(row[2])) << '\n';
    }

private:
    ExperimentConfig cfg_;
    fs::path out_;
    int jobs_;
    std::string header_;

    TranslatorConfig translator_config(Task task) const {
        TranslatorConfig tc = cfg_.translator;
        tc.train.seed = derive_seed(cfg_.seed, kSeedTranslator, static_cast<std::uint64_t>(task));
        return tc;
    }

    static void require(const fs::path& p, const std::string& producer) {
        if (!fs::exists(p)) throw DependencyError("missing artifact " + p.string() + " (produced by `exo " + producer + "`)");
    }

    template <typename F>
    void write_file(const fs::path& p, F&& body) const {
        std::ofstream os(p, std::ios::binary);
        if (!os) throw std::runtime_error("cannot write " + p.string());
        os << header_ << '\n';
        body(os);
        if (!os) throw std::runtime_error("write failed: " + p.string());
    }

    static csv::Table read_table(const fs::path& p, const std::string& producer) {
        require(p, producer);
        return csv::read_table(p.string());
    }

    static EpisodeLog read_episode(const fs::path& p, const std::string& producer) {
        return EpisodeLog::from_table(read_table(p, producer));
    }

    std::vector<SubjectProfile> read_population_file() const {
        require(population_file(), "gen-data");
        std::ifstream is(population_file());
        auto pop = read_population(is);
        if (static_cast<int>(pop.size()) != cfg_.data.subjects)
            throw DependencyError(population_file().string() + " holds " + std::to_string(pop.size()) +
                                  " subjects but the config asks for " + std::to_string(cfg_.data.subjects) + "; rerun `exo gen-data`");
        return pop;
    }

    VaeModel read_vae(Modality m, const std::string& producer) const {
        require(vae_file(m), producer);
        return load_vae(vae_file(m).string());
    }

    static DmpModel read_dmp_file(const fs::path& p, const std::string& producer) {
        require(p, producer);
        std::ifstream is(p);
        return read_dmp(is);
    }

    std::vector<std::vector<ConflictEvent>> read_conflicts() const {
        const csv::Table t = read_table(conflicts_file(), "gen-data");
        const int n_eval = cfg_.data.eval_subjects();
        std::vector<std::vector<ConflictEvent>> out(static_cast<std::size_t>(2 * n_eval));
        for (std::size_t r = 0; r < t.rows.size(); ++r) {
            const int id = static_cast<int>(t.value(r, "subject_id"));
            const std::string kind = t.rows[r][static_cast<std::size_t>(t.column("kind"))];
            const int k = kind == to_string(ConflictKind::asynchronization) ? 0 : 1;
            if (id < 0 || id >= n_eval) throw std::runtime_error(conflicts_file().string() + ": subject id out of range");
            out[static_cast<std::size_t>(2 * id + k)].push_back(
                {kConflictKinds[static_cast<std::size_t>(k)], t.value(r, "onset_s"), t.value(r, "duration_s"), t.value(r, "severity")});
        }
        return out;
    }

    void eval_detectors() const {
        const auto events = read_conflicts();
        std::vector<EpisodeLog> logs;
        for (int id = 0; id < cfg_.data.eval_subjects(); ++id)
            for (ConflictKind k : kConflictKinds) logs.push_back(read_episode(conflict_file(id, k), "gen-data"));
        std::vector<VaeModel> models;
        for (Modality m : kModalities) models.push_back(read_vae(m, "train-vae"));

        std::vector<RocCurve> rocs(models.size());
        std::vector<std::size_t> windows(models.size()), anomalous(models.size());
        parallel_for(static_cast<int>(models.size()), jobs_, [&](int mi) {
            const VaeModel& vm = models[static_cast<std::size_t>(mi)];
            std::vector<double> scores;
            std::vector<int> labels;
            for (std::size_t e = 0; e < logs.size(); ++e) {
                const MatrixXd W = segment(extract_channels(logs[e], vm.spec.modality), vm.spec, vm.norm);
                const VectorXd s = score_windows(vm, W);
                const auto l = window_labels(logs[e], vm.spec, events[e]);
                for (Eigen::Index j = 0; j < s.size(); ++j) {
                    scores.push_back(s[j]);
                    labels.push_back(l[static_cast<std::size_t>(j)]);
                }
            }
            rocs[static_cast<std::size_t>(mi)] = evaluate_auc(scores, labels);
            windows[static_cast<std::size_t>(mi)] = scores.size();
            anomalous[static_cast<std::size_t>(mi)] = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
        });
        write_file(out_ / "auc.csv", [&](std::ostream& os) {
            os << "modality,windows,anomalous,auc\n";
            for (std::size_t m = 0; m < models.size(); ++m)
                os << to_string(kModalities[m]) << ',' << windows[m] << ',' << anomalous[m] << ',' << csv::num(rocs[m].auc) << '\n';
        });
        write_file(out_ / "roc.csv", [&](std::ostream& os) {
            os << "modality,fpr,tpr\n";
            for (std::size_t m = 0; m < models.size(); ++m)
                for (std::size_t k = 0; k < rocs[m].fpr.size(); ++k)
                    os << to_string(kModalities[m]) << ',' << csv::num(rocs[m].fpr[k]) << ',' << csv::num(rocs[m].tpr[k]) << '\n';
        });
    }

    void eval_translators(const std::vector<SubjectProfile>& pop) const {
        const std::array<TranslatorMethod, 2> methods = {TranslatorMethod::nn, TranslatorMethod::ridge};
        std::vector<LoocvResult> results(kTargetTasks.size() * methods.size());
        parallel_for(static_cast<int>(results.size()), jobs_, [&](int j) {
            const Task task = kTargetTasks[static_cast<std::size_t>(j) / methods.size()];
            const TranslatorMethod method = methods[static_cast<std::size_t>(j) % methods.size()];
            results[static_cast<std::size_t>(j)] = loocv(build_translation_dataset(pop, task, cfg_.dmp), pop, method, translator_config(task));
        });
        write_file(out_ / "translator_results.csv", [&](std::ostream& os) {
            os << "subject_id,task,method,rmse_deg\n";
            for (std::size_t j = 0; j < results.size(); ++j)
                for (std::size_t s = 0; s < results[j].subjects.size(); ++s)
                    os << results[j].subjects[s] << ',' << task_name(kTargetTasks[j / methods.size()]) << ','
                       << to_string(methods[j % methods.size()]) << ',' << csv::num(results[j].rmse_deg[s]) << '\n';
        });
    }

    void eval_hil(const std::vector<SubjectProfile>& pop) const {
        std::vector<std::string> summary, moved;
        for (int id = 0; id < cfg_.hil.subjects; ++id) {
            const csv::Table t = read_table(hil_file(id), "hil");
            if (t.rows.empty()) throw std::runtime_error(hil_file(id).string() + ": empty trace");
            const std::size_t last = t.rows.size() - 1;
            int halvings = 0;
            for (std::size_t r = 1; r < t.rows.size(); ++r)
                if (t.value(r, "bound_width") < t.value(r - 1, "bound_width")) ++halvings;
            const double first = t.value(0, "cost"), final_inc = t.value(last, "incumbent");
            summary.push_back(std::to_string(id) + ',' + std::to_string(t.rows.size()) + ',' + csv::num(first) + ',' +
                              csv::num(final_inc) + ',' + csv::num(final_inc / first) + ',' + std::to_string(halvings));
            const auto& p = pop.at(static_cast<std::size_t>(id));
            for (Task task : kTargetTasks) {
                const DmpModel m = read_dmp_file(translated_file(id, task), "translate");
                moved.push_back(std::to_string(id) + ',' + task_name(task) + ",hil_translated," + csv::num(trajectory_rmse_deg(m, p, task)));
                moved.push_back(std::to_string(id) + ',' + task_name(task) + ",normative," +
                                csv::num(trajectory_rmse_deg(normative_model(task, cfg_.dmp), p, task)));
            }
        }
        write_file(out_ / "hil_summary.csv", [&](std::ostream& os) {
            os << "subject_id,iterations,first_cost,final_incumbent,ratio,halvings\n";
            for (const auto& l : summary) os << l << '\n';
        });
        write_file(out_ / "translated_rmse.csv", [&](std::ostream& os) {
            os << "subject_id,task,method,rmse_deg\n";
            for (const auto& l : moved) os << l << '\n';
        });
    }
};

}  // namespace exo
