#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "segclr/commands.hpp"
#include "segclr/config.hpp"
#include "segclr/evaluation.hpp"

using namespace segclr;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
    const auto p = fs::temp_directory_path() / ("segclr_cli_" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

void write_file(const fs::path& p, const std::string& content) {
    std::ofstream f(p);
    f << content;
}

std::string gen_config3() {
    std::string out;
    out += "name = desk\nseed = 5\nfractions = 0.5,0.25,0.25\n";
    for (const char* id : {"da", "db", "dc"}) {
        const std::string p = std::string("domain.") + id + ".";
        out += p + "n_volumes = 4\n";
        out += p + "slices_per_volume = 4\n";
        out += p + "slice_h = 16\n";
        out += p + "slice_w = 16\n";
        out += p + "classes = blob_dark,blob_bright\n";
        out += p + "labeled_slices_per_volume = 2\n";
        out += p + "lesion_density = 5\n";
        out += p + "lesion_scale = 3\n";
    }
    return out;
}

std::string exp_config(const std::string& extra = "", bool with_target = true) {
    return "name = cli_tiny\n"
           "variant = segclr\n"
           "pairing = a\n"
           "projection = ch\n"
           "source_domains = da\n" +
           std::string(with_target ? "target_domains = db\n" : "") +
           "classes = blob_dark,blob_bright\n"
           "seeds = 0,1\n"
           "epochs = 2\n"
           "batch_size_sup = 2\n"
           "batch_size_con = 2\n"
           "arch.depth = 2\n"
           "arch.base_channels = 4\n"
           "arch.input_h = 16\n"
           "arch.input_w = 16\n"
           "arch.dropout_p = 0.25\n"
           "arch.mlp_units = 8\n" +
           extra;
}

std::map<std::string, std::string> dir_file_contents(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        std::ifstream f(e.path(), std::ios::binary);
        std::stringstream ss;
        ss << f.rdbuf();
        out[fs::relative(e.path(), dir).string()] = ss.str();
    }
    return out;
}

}  // namespace

TEST_CASE("cmd_generate: one directory per domain, deterministic bytes") {
    const auto root = temp_dir("gen");
    const auto cfg = root / "gen.cfg";
    write_file(cfg, gen_config3());
    cmd_generate(cfg.string(), (root / "data").string());
    CHECK(fs::exists(root / "data" / "da" / "manifest.txt"));
    CHECK(fs::exists(root / "data" / "db" / "manifest.txt"));
    CHECK(fs::exists(root / "data" / "dc" / "manifest.txt"));
    const auto first = dir_file_contents(root / "data");
    cmd_generate(cfg.string(), (root / "data").string());  // rerun
    CHECK(dir_file_contents(root / "data") == first);      // identical bytes

    // missing required field names the field path
    write_file(cfg, "domain.dx.slices_per_volume = 4\n");
    CHECK_THROWS_WITH_AS(cmd_generate(cfg.string(), (root / "d2").string()),
                         doctest::Contains("domain.dx.n_volumes"), std::invalid_argument);
    fs::remove_all(root);
}

TEST_CASE("cmd_train writes checkpoints, histories, manifest; respects --force") {
    const auto root = temp_dir("train");
    write_file(root / "gen.cfg", gen_config3());
    cmd_generate((root / "gen.cfg").string(), (root / "data").string());
    write_file(root / "exp.cfg", exp_config());

    TrainOptions opts;
    cmd_train((root / "exp.cfg").string(), (root / "data").string(), (root / "run").string(), opts);
    CHECK(fs::exists(root / "run" / "ckpt_seed0.bin"));
    CHECK(fs::exists(root / "run" / "ckpt_seed1.bin"));
    CHECK(fs::exists(root / "run" / "history_seed0.txt"));
    CHECK(fs::exists(root / "run" / "run_manifest.txt"));

    const auto manifest = RunManifest::load((root / "run" / "run_manifest.txt").string());
    CHECK(manifest.model_id == "segclr_Pa_Cch");
    CHECK(manifest.seeds == std::vector<int>{0, 1});
    CHECK(manifest.data_domains == std::vector<std::string>{"da", "db"});
    for (const auto& p : manifest.checkpoints) CHECK(fs::exists(root / "run" / p));

    // rerun without --force refuses; with --force overwrites deterministically
    CHECK_THROWS_WITH_AS(cmd_train((root / "exp.cfg").string(), (root / "data").string(),
                                   (root / "run").string(), opts),
                         doctest::Contains("--force"), std::invalid_argument);
    std::ifstream c0(root / "run" / "ckpt_seed0.bin", std::ios::binary);
    std::stringstream s0;
    s0 << c0.rdbuf();
    opts.force = true;
    cmd_train((root / "exp.cfg").string(), (root / "data").string(), (root / "run").string(), opts);
    std::ifstream c1(root / "run" / "ckpt_seed0.bin", std::ios::binary);
    std::stringstream s1;
    s1 << c1.rdbuf();
    CHECK(s0.str() == s1.str());  // bit-identical rerun

    // seed override
    opts.seeds_override = {7};
    cmd_train((root / "exp.cfg").string(), (root / "data").string(), (root / "run7").string(),
              opts);
    const auto m7 = RunManifest::load((root / "run7" / "run_manifest.txt").string());
    CHECK(m7.seeds == std::vector<int>{7});
    fs::remove_all(root);
}

TEST_CASE("domain-generalization run records zero target reads") {
    const auto root = temp_dir("dg");
    write_file(root / "gen.cfg", gen_config3());
    cmd_generate((root / "gen.cfg").string(), (root / "data").string());
    write_file(root / "exp.cfg", exp_config("", /*with_target=*/false));

    TrainOptions opts;
    cmd_train((root / "exp.cfg").string(), (root / "data").string(), (root / "run").string(), opts);
    const auto manifest = RunManifest::load((root / "run" / "run_manifest.txt").string());
    CHECK(manifest.data_domains == std::vector<std::string>{"da"});
    CHECK(manifest.domain_image_reads.count("db") == 0);  // never opened
    fs::remove_all(root);
}

TEST_CASE("cmd_evaluate: row counts, ordering, unknown model id") {
    const auto root = temp_dir("eval");
    write_file(root / "gen.cfg", gen_config3());
    cmd_generate((root / "gen.cfg").string(), (root / "data").string());
    write_file(root / "exp.cfg", exp_config());
    TrainOptions opts;
    cmd_train((root / "exp.cfg").string(), (root / "data").string(), (root / "run").string(), opts);

    const auto csv = (root / "metrics.csv").string();
    cmd_evaluate((root / "run" / "run_manifest.txt").string(), (root / "data").string(), csv,
                 {"da", "db"});
    const auto records = read_metric_csv(csv);
    // 2 seeds x 2 domains x 1 test volume x 2 labeled slices x 2 classes
    CHECK(records.size() == std::size_t(2) * 2 * 1 * 2 * 2);
    CHECK(std::is_sorted(records.begin(), records.end(),
                         [](const MetricRecord& a, const MetricRecord& b) {
                             return std::tie(a.model_id, a.seed, a.domain_id, a.volume_id,
                                             a.slice_index, a.class_name) <
                                    std::tie(b.model_id, b.seed, b.domain_id, b.volume_id,
                                             b.slice_index, b.class_name);
                         }));

    CHECK_THROWS_WITH_AS(
        cmd_evaluate((root / "run" / "run_manifest.txt").string(), (root / "data").string(), csv,
                     {"da"}, "not_a_model"),
        doctest::Contains("unknown model id"), std::invalid_argument);
    fs::remove_all(root);
}

TEST_CASE("cmd_rank: tied models, constituent ranks, missing cells") {
    const auto root = temp_dir("rank");
    // construct two identical models by hand
    std::vector<MetricRecord> recs;
    for (int seed : {0, 1, 2})
        for (const char* vol : {"v0", "v1"})
            for (const char* model : {"m1", "m2"}) {
                MetricRecord r;
                r.model_id = model;
                r.seed = seed;
                r.domain_id = "da";
                r.volume_id = vol;
                r.slice_index = 0;
                r.class_name = "blob_dark";
                r.dice = 55.0;
                r.uvd = 444.0;
                recs.push_back(r);
            }
    write_metric_csv(recs, (root / "m.csv").string());
    cmd_rank({(root / "m.csv").string()}, (root / "out").string());

    std::ifstream rf(root / "out" / "ranks.csv");
    std::string header, row;
    std::getline(rf, header);
    CHECK(header == "domain,model_id,final_rank,dice_rank,uvd_rank");  // constituents present
    std::getline(rf, row);
    CHECK(row.find("1.5") != std::string::npos);  // tie -> average rank

    std::ifstream sf(root / "out" / "significance.csv");
    std::getline(sf, header);
    std::getline(sf, row);
    CHECK(row.find("n.s.") != std::string::npos);
    CHECK(fs::exists(root / "out" / "significance.json"));

    // missing (model, seed, volume) cell
    recs.pop_back();
    write_metric_csv(recs, (root / "m2.csv").string());
    CHECK_THROWS_WITH_AS(cmd_rank({(root / "m2.csv").string()}, (root / "out2").string()),
                         doctest::Contains("missing cells"), std::invalid_argument);
    fs::remove_all(root);
}

TEST_CASE("cmd_report: tables, plots, single-source values") {
    const auto root = temp_dir("report");
    std::vector<MetricRecord> recs;
    for (int seed : {0, 1, 2})
        for (const char* model : {"baseline_unet", "segclr_Pa_Cch"}) {
            MetricRecord r;
            r.model_id = model;
            r.seed = seed;
            r.domain_id = "da";
            r.volume_id = "v0";
            r.slice_index = 0;
            r.class_name = "blob_dark";
            r.dice = model == std::string("baseline_unet") ? 50.0 : 60.0 + seed;
            r.uvd = 100.0;
            recs.push_back(r);
        }
    write_metric_csv(recs, (root / "m.csv").string());
    cmd_report({(root / "m.csv").string()}, (root / "out").string(), "baseline_unet");
    CHECK(fs::exists(root / "out" / "summary.csv"));
    CHECK(fs::exists(root / "out" / "relative.csv"));
    CHECK(fs::exists(root / "out" / "ranks.csv"));
    CHECK(fs::exists(root / "out" / "rel_dice_da.svg"));
    CHECK(fs::exists(root / "out" / "rel_uvd_da.svg"));

    // table values equal evaluation-module outputs
    std::ifstream rf(root / "out" / "relative.csv");
    std::string line;
    std::getline(rf, line);  // header
    bool saw_segclr = false;
    while (std::getline(rf, line)) {
        if (line.find("segclr_Pa_Cch,0,") != std::string::npos) {
            // rel dice for seed 0: 60/50 - 1 = +20%
            const auto tail = line.substr(line.find("segclr_Pa_Cch,0,") + 16);
            CHECK(std::stod(tail) == doctest::Approx(20.0).epsilon(1e-12));
            saw_segclr = true;
        }
    }
    CHECK(saw_segclr);

    CHECK_THROWS_WITH_AS(
        cmd_report({(root / "m.csv").string()}, (root / "out2").string(), "nope"),
        doctest::Contains("baseline"), std::invalid_argument);
    fs::remove_all(root);
}

TEST_CASE("experiment config parsing: defaults, errors, unknown keys") {
    const auto root = temp_dir("cfg");
    write_file(root / "e.cfg", exp_config());
    const auto c = parse_experiment_config((root / "e.cfg").string());
    CHECK(c.name == "cli_tiny");
    CHECK(c.loss.lambda_sup == 20.0);
    CHECK(c.loss.tau == 0.5);
    CHECK(c.arch.n_classes == 2);
    CHECK(c.arch.head_kind == HeadKind::ch);
    CHECK(c.optimizer.lr == 1e-3);

    write_file(root / "bad.cfg", exp_config("unknown_key = 1\n"));
    CHECK_THROWS_WITH_AS(parse_experiment_config((root / "bad.cfg").string()),
                         doctest::Contains("unknown_key"), std::invalid_argument);
    write_file(root / "dup.cfg", exp_config("epochs = 3\n"));
    CHECK_THROWS_WITH_AS(parse_experiment_config((root / "dup.cfg").string()),
                         doctest::Contains("duplicate"), std::invalid_argument);
    fs::remove_all(root);
}

#ifdef SEGCLR_BIN
TEST_CASE("binary smoke test: full pipeline through the CLI") {
    const auto root = temp_dir("smoke");
    write_file(root / "gen.cfg", gen_config3());
    write_file(root / "exp.cfg", exp_config());
    const std::string bin = SEGCLR_BIN;
    const auto run = [&](const std::string& args) {
        return std::system((bin + " " + args + " > /dev/null 2>&1").c_str());
    };
    CHECK(run("generate --config " + (root / "gen.cfg").string() + " --out " +
              (root / "data").string()) == 0);
    CHECK(run("train --config " + (root / "exp.cfg").string() + " --data " +
              (root / "data").string() + " --out " + (root / "run").string() + " --seeds 0") == 0);
    CHECK(run("evaluate --manifest " + (root / "run" / "run_manifest.txt").string() + " --data " +
              (root / "data").string() + " --out " + (root / "m.csv").string()) == 0);
    CHECK(run("rank --metrics " + (root / "m.csv").string() + " --out " +
              (root / "ranked").string()) == 0);
    CHECK(run("report --metrics " + (root / "m.csv").string() + " --out " +
              (root / "report").string() + " --baseline segclr_Pa_Cch") == 0);
    // exit code 1 on validation errors
    CHECK(run("train --config /nonexistent.cfg --data x --out y") != 0);
    fs::remove_all(root);
}
#endif

#ifdef SEGCLR_CONFIGS
TEST_CASE("shipped preset configs parse and validate") {
    const fs::path dir = SEGCLR_CONFIGS;
    const auto gen = parse_generation_config((dir / "dataset_desk.cfg").string());
    CHECK(gen.domains.size() == 3);
    CHECK(gen.domains[2].class_set == std::vector<std::string>{"blob_dark"});

    for (const char* name : {"uda_appearance.cfg", "uda_content.cfg", "ablation_unlabeled.cfg",
                             "dg_grid.cfg", "multidomain.cfg"}) {
        const auto cfg = parse_experiment_config((dir / name).string());
        CHECK(cfg.seeds.size() == 5);
        CHECK(cfg.arch.input_h == 64);
    }
    const auto dg = parse_experiment_config((dir / "dg_grid.cfg").string());
    CHECK(dg.target_domains.empty());
    const auto multi = parse_experiment_config((dir / "multidomain.cfg").string());
    CHECK(multi.source_domains.size() == 3);
    const auto abl = parse_experiment_config((dir / "ablation_unlabeled.cfg").string());
    CHECK(abl.unlabeled_fraction == 0.1);
}
#endif
