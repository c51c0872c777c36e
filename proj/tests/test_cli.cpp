#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "c123/commands.hpp"
#include "c123/config.hpp"
#include "c123/dataset.hpp"
#include "c123/errors.hpp"
#include "c123/model.hpp"

using namespace c123;
namespace fs = std::filesystem;

namespace {

// settings small enough for unit-test turnaround
RunConfig tiny_run_config() {
    RunConfig c;
    c.seed = 1234;
    c.dataset.n_objects = 2;
    c.dataset.views_per_object = 8;
    c.dataset.resolution = 16;
    c.model.base_channels = 8;
    c.model.channel_mults = {1, 2};
    c.model.attn_levels = {1};
    c.model.embed_dim = 16;
    c.model.heads = 2;
    c.model.norm_groups = 4;
    c.train.steps = 10;
    c.train.batch_size = 1;
    c.train.lr = 1e-3;
    c.train.log_every = 5;
    c.train.n_views = 2;
    c.sample.steps = 10;
    c.sample.n_views = 8;
    c.eval.fit_iterations = 80;
    c.eval.field_res = 16;
    c.eval.fit_samples = 24;
    c.eval.ray_batch = 256;
    return c;
}

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f.good());
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("config: defaults, round-trip, unknown keys rejected") {
    RunConfig def;
    std::string text = serialize_config(def);
    RunConfig back = parse_config_text(text);
    CHECK(serialize_config(back) == text);

    RunConfig c = parse_config_text("seed = 7\ntrain.lr = 0.0005\nmodel.channel_mults = 1,2\n");
    CHECK(c.seed == 7);
    CHECK(c.train.lr == doctest::Approx(5e-4));
    CHECK(c.model.channel_mults == std::vector<int>{1, 2});
    CHECK(c.dataset.views_per_object == 18);  // untouched default

    CHECK_THROWS_AS(parse_config_text("no_such_key = 1\n"), ParamError);
    CHECK_THROWS_AS(parse_config_text("train.steps = banana\n"), ParamError);
    CHECK_THROWS_AS(parse_config_text("just a line\n"), ParamError);
    // comments and blanks are fine
    CHECK_NOTHROW(parse_config_text("# comment\n\nseed = 3 # trailing\n"));
}

TEST_CASE("cmd_dataset: split rule, determinism, manifest shape") {
    std::string dir = "/tmp/c123_cli_ds";
    fs::remove_all(dir);
    RunConfig cfg = tiny_run_config();
    cmd_dataset(cfg, dir, 2);

    DatasetManifest m = load_manifest(dir + "/dataset");
    REQUIRE(m.objects.size() == 2);
    // 2 objects -> 1 train / 1 test (minimum rule)
    int train = 0, test = 0;
    for (const auto& o : m.objects) (o.split == "test" ? test : train)++;
    CHECK(train == 1);
    CHECK(test == 1);
    for (const auto& o : m.objects) CHECK(o.views.size() == 8);

    // rerun with the same seed: byte-identical manifest
    std::string manifest1 = read_file(dir + "/dataset/manifest.json");
    fs::remove_all(dir);
    cmd_dataset(cfg, dir, 1);  // different job count must not matter
    CHECK(read_file(dir + "/dataset/manifest.json") == manifest1);

    // 100 objects -> 99 train / 1 test (counted, not rendered: use the rule)
    int n = 100;
    int test_count = std::max(1, (n + 99) / 100);
    CHECK(test_count == 1);
    n = 250;
    CHECK(std::max(1, (n + 99) / 100) == 3);
}

TEST_CASE("cmd_train + cmd_sample + cmd_eval end-to-end on tiny settings") {
    std::string dir = "/tmp/c123_cli_e2e";
    fs::remove_all(dir);
    RunConfig cfg = tiny_run_config();
    cmd_dataset(cfg, dir, 2);

    // consistency stage without a base checkpoint is an explicit error
    RunConfig bad = cfg;
    bad.train.stage = "consistency";
    CHECK_THROWS_AS(cmd_train(bad, dir), UsageError);

    cfg.train.stage = "base";
    cmd_train(cfg, dir);
    CHECK(fs::exists(dir + "/ckpt_base.c123"));

    // loss CSV: one row per logged step, monotone step column
    {
        std::ifstream f(dir + "/loss_base.csv");
        std::string header;
        std::getline(f, header);
        CHECK(header == "step,loss");
        int prev = 0, rows = 0;
        std::string line;
        while (std::getline(f, line)) {
            int step = std::stoi(line.substr(0, line.find(',')));
            CHECK(step > prev);
            prev = step;
            ++rows;
        }
        CHECK(rows == 2);  // 10 steps, log_every 5
    }

    // consistency stage: base params bit-identical afterwards
    cfg.train.stage = "consistency";
    cmd_train(cfg, dir);
    CHECK(fs::exists(dir + "/ckpt_consistency.c123"));
    {
        UNet base = UNet::load(dir + "/ckpt_base.c123");
        UNet cons = UNet::load(dir + "/ckpt_consistency.c123");
        auto bp = base.parameters(ParamGroup::Base);
        auto cp = cons.parameters(ParamGroup::Base);
        REQUIRE(bp.size() == cp.size());
        for (size_t i = 0; i < bp.size(); ++i) {
            CHECK(bp[i].first == cp[i].first);
            const float* a = bp[i].second.data();
            const float* b = cp[i].second.data();
            for (int64_t j = 0; j < bp[i].second.numel(); ++j) CHECK(a[j] == b[j]);
        }
        CHECK(!cons.parameters(ParamGroup::CrossViewOnly).empty());
    }

    // sample: n_views files + manifest; seeded rerun byte-identical
    cmd_sample(cfg, dir);
    DatasetManifest sm = load_manifest(dir + "/samples");
    REQUIRE(sm.objects.size() == 1);
    CHECK(sm.objects[0].views.size() == 8);
    std::string png0 = read_file(dir + "/samples/" + sm.objects[0].views[0].file);
    fs::remove_all(dir + "/samples");
    cmd_sample(cfg, dir);
    CHECK(read_file(dir + "/samples/" + sm.objects[0].views[0].file) == png0);

    // eval consistency on the samples
    cmd_eval(cfg, dir, 2);
    {
        std::ifstream f(dir + "/eval_consistency.csv");
        std::string line;
        std::getline(f, line);  // comment header
        std::getline(f, line);
        CHECK(line == "object_id,n_views,psnr,ssim,split_seed");
        int rows = 0;
        while (std::getline(f, line)) ++rows;
        CHECK(rows == 2);  // one object + aggregate
    }

    // eval gt of the dataset against itself: 99 dB cap and SSIM 1
    RunConfig gt = cfg;
    gt.eval.mode = "gt";
    gt.eval.target = "dataset";
    cmd_eval(gt, dir, 2);
    {
        std::ifstream f(dir + "/eval_gt.csv");
        std::string line;
        std::getline(f, line);
        std::getline(f, line);
        std::getline(f, line);  // first object row
        // object_id,n_views,psnr,ssim,seed
        auto p1 = line.find(',');
        auto p2 = line.find(',', p1 + 1);
        auto p3 = line.find(',', p2 + 1);
        double psnr_v = std::stod(line.substr(p2 + 1, p3 - p2 - 1));
        CHECK(psnr_v == doctest::Approx(99.0));
    }

    // aggregate equals the mean of object rows within 1e-9
    {
        std::ifstream f(dir + "/eval_gt.csv");
        std::string line;
        std::getline(f, line);
        std::getline(f, line);
        std::vector<double> psnrs;
        double agg = 0;
        while (std::getline(f, line)) {
            auto p1 = line.find(',');
            auto p2 = line.find(',', p1 + 1);
            auto p3 = line.find(',', p2 + 1);
            double v = std::stod(line.substr(p2 + 1, p3 - p2 - 1));
            if (line.rfind("aggregate", 0) == 0)
                agg = v;
            else
                psnrs.push_back(v);
        }
        double mean = 0;
        for (double v : psnrs) mean += v;
        mean /= static_cast<double>(psnrs.size());
        CHECK(std::fabs(agg - mean) < 1e-9);
    }

    // sample with n_views=1 degenerates to single-view synthesis
    RunConfig one = cfg;
    one.sample.n_views = 1;
    fs::remove_all(dir + "/samples");
    cmd_sample(one, dir);
    DatasetManifest sm1 = load_manifest(dir + "/samples");
    CHECK(sm1.objects[0].views.size() == 1);

    // resolution mismatch between checkpoint and config -> explicit error
    RunConfig wrong = cfg;
    wrong.dataset.resolution = 32;
    CHECK_THROWS_AS(cmd_sample(wrong, dir), ParamError);
}

TEST_CASE("cmd_ablate emits one row per setting") {
    std::string dir = "/tmp/c123_cli_ablate";
    fs::remove_all(dir);
    RunConfig cfg = tiny_run_config();
    cfg.eval.n_sample_views = 8;
    cfg.eval.fit_iterations = 30;
    cfg.sample.steps = 5;
    cmd_dataset(cfg, dir, 2);
    cfg.train.stage = "base";
    cfg.train.steps = 4;
    cmd_train(cfg, dir);

    cmd_ablate(cfg, dir, "pcfg_kind", 1);
    std::ifstream f(dir + "/ablate_pcfg_kind.csv");
    std::string line;
    std::getline(f, line);
    std::getline(f, line);
    std::vector<std::string> labels;
    while (std::getline(f, line)) labels.push_back(line.substr(0, line.find(',')));
    REQUIRE(labels.size() == 5);  // 4 kinds + aggregate
    CHECK(labels[0] == "constant");
    CHECK(labels[1] == "linear");
    CHECK(labels[2] == "concave");
    CHECK(labels[3] == "convex");

    CHECK_THROWS_AS(cmd_ablate(cfg, dir, "bogus_axis", 1), ParamError);
}

TEST_CASE("effective config is written alongside outputs and reloads equal") {
    std::string dir = "/tmp/c123_cli_cfg";
    fs::remove_all(dir);
    RunConfig cfg = tiny_run_config();
    cmd_dataset(cfg, dir, 1);
    RunConfig back = parse_config_file(dir + "/dataset/config.effective");
    CHECK(serialize_config(back) == serialize_config(cfg));
}
