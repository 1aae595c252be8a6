#ifndef MIRAGE_REPORT_HPP
#define MIRAGE_REPORT_HPP

// Out-of-line half of pipeline.hpp: the report stage. Kept separate for
// readability; pipeline.hpp includes this at the end, and including this file
// directly pulls pipeline.hpp in first.

#include <algorithm>
#include <cstdio>

#include "mirage/pipeline.hpp"

namespace mirage {

namespace report_detail {

inline std::string fmt2(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

inline std::string fmt2_signed(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%+.2f", v);
    return buf;
}

inline std::string fmt_p(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2e", v);
    return buf;
}

// Markdown cell for a possibly-undefined metric.
inline std::string cell(const nlohmann::json& v, bool signed_fmt = false) {
    if (v.is_null()) return "n/a";
    return signed_fmt ? fmt2_signed(v.get<double>()) : fmt2(v.get<double>());
}

inline double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
}

}  // namespace report_detail

inline void Pipeline::stage_report() {
    namespace rd = report_detail;
    using nlohmann::json;

    const std::vector<std::string> candidates{
        "eval/base/report.json",      "eval/base/chair.json", "eval/obliviate/report.json",
        "eval/obliviate/chair.json",  "eval/audit.json",      "probe/summary.json",
        "sweeps/alpha.json",          "sweeps/ratio.json",    "sweeps/captions.json"};
    std::vector<std::string> inputs;
    for (const auto& rel : candidates) {
        if (std::filesystem::exists(out_ / rel)) inputs.push_back(rel);
    }
    auto have = [&](const std::string& rel) {
        return std::find(inputs.begin(), inputs.end(), rel) != inputs.end();
    };

    std::vector<std::string> outputs{"report/report.md"};
    if (have("probe/summary.json")) outputs.push_back("report/probe_accuracy.svg");
    if (have("eval/audit.json")) outputs.push_back("report/logit_audit.svg");
    if (have("sweeps/captions.json")) outputs.push_back("report/scaling.svg");

    run_stage("report", inputs, outputs, [&] {
        auto load_json = [&](const std::string& rel) { return json::parse(read_file(out_ / rel)); };
        // Traceability: the hash printed here is the same content hash the
        // producing stage recorded in manifest.jsonl for this artifact.
        auto src = [&](const std::string& rel) {
            return "`" + rel + "` (sha256 " + sha256_file(abs(rel)) + ")";
        };
        auto missing = [](const std::string& rel) {
            return "_Missing artifact: `" + rel + "`— section omitted._\n\n";
        };

        std::string md;
        md += "# Run report\n\n";
        md += "Config hash: `" + cfg_.config_hash + "`\n\n";

        // -- before/after table  ---------------------------------------------
        md += "## Benchmark and caption metrics, base vs. debiased\n\n";
        if (have("eval/base/report.json") && have("eval/obliviate/report.json") &&
            have("eval/base/chair.json") && have("eval/obliviate/chair.json")) {
            const json base = load_json("eval/base/report.json");
            const json debi = load_json("eval/obliviate/report.json");
            const json base_chair = load_json("eval/base/chair.json");
            const json debi_chair = load_json("eval/obliviate/chair.json");
            const json& bm = base.at("metrics");
            const json& dm = debi.at("metrics");
            auto yes_rate = [](const json& m) -> json {
                if (m.at("pbo").is_null()) return nullptr;
                return m.at("pbo").get<double>() + 50.0;
            };
            md += "| Metric | Base | Debiased |\n|---|---|---|\n";
            const std::vector<std::pair<std::string, std::string>> rows{
                {"Accuracy", "accuracy"}, {"Precision", "precision"}, {"Recall", "recall"},
                {"F1", "f1"},             {"TNR", "tnr"}};
            for (const auto& [label, key] : rows) {
                md += "| " + label + " | " + rd::cell(bm.at(key)) + " | " + rd::cell(dm.at(key)) +
                      " |\n";
            }
            md += "| Yes% | " + rd::cell(yes_rate(bm)) + " | " + rd::cell(yes_rate(dm)) + " |\n";
            md += "| PBO | " + rd::cell(bm.at("pbo"), true) + " | " + rd::cell(dm.at("pbo"), true) +
                  " |\n";
            md += "| CHAIR Resp. | " + rd::cell(base_chair.at("resp_rate")) + " | " +
                  rd::cell(debi_chair.at("resp_rate")) + " |\n";
            md += "| CHAIR Mention | " + rd::cell(base_chair.at("mention_rate")) + " | " +
                  rd::cell(debi_chair.at("mention_rate")) + " |\n\n";
            md += "Sources: " + src("eval/base/report.json") + ", " +
                  src("eval/obliviate/report.json") + ", " + src("eval/base/chair.json") + ", " +
                  src("eval/obliviate/chair.json") + "\n\n";
        } else {
            for (const auto& rel :
                 {"eval/base/report.json", "eval/obliviate/report.json", "eval/base/chair.json",
                  "eval/obliviate/chair.json"}) {
                if (!have(rel)) md += missing(rel);
            }
        }

        // -- probe section -----------------------------------------------------
        md += "## Probe accuracy by tap\n\n";
        if (have("probe/summary.json")) {
            const json probe = load_json("probe/summary.json");
            ChartSpec chart;
            chart.title = "Probe test accuracy by tap (target: " +
                          probe.at("target").get<std::string>() + ")";
            chart.y_label = "accuracy (%)";
            chart.hlines = {probe.at("generation_accuracy").get<double>()};
            chart.hline_label = "generation accuracy";
            ChartSeries series;
            series.label = "probe";
            md += "| Tap | Val acc | Test acc |\n|---|---|---|\n";
            for (const auto& tap : all_tap_names(cfg_.layers)) {
                const json& row = probe.at("taps").at(tap);
                chart.x_labels.push_back(tap);
                series.values.push_back(row.at("test_accuracy").get<double>());
                md += "| " + tap + " | " + rd::cell(row.at("val_accuracy")) + " | " +
                      rd::cell(row.at("test_accuracy")) + " |\n";
            }
            chart.series.push_back(std::move(series));
            write_file("report/probe_accuracy.svg", bar_chart_svg(chart));
            md += "\nGeneration accuracy on the same counterfactuals: " +
                  rd::cell(probe.at("generation_accuracy")) + ". Best tap: `" +
                  probe.at("best_tap").get<std::string>() + "` at " +
                  rd::cell(probe.at("best_tap_accuracy")) + " (gap " +
                  rd::cell(probe.at("gap"), true) + " points).\n\n";
            md += "![probe accuracy](probe_accuracy.svg)\n\n";
            md += "Source: " + src("probe/summary.json") + "\n\n";
        } else {
            md += missing("probe/summary.json");
        }

        // -- logit audit -------------------------------------------------------
        md += "## Logit audit\n\n";
        if (have("eval/audit.json")) {
            const json audit = load_json("eval/audit.json");
            const json& b = audit.at("base");
            md += "Context `" + b.at("context").get<std::string>() + "`; lifted class `" +
                  b.at("lifted").get<std::string>() + "` vs. control `" +
                  b.at("control").get<std::string>() + "`, both absent from every audited scene.\n\n";
            md += "| Checkpoint | Mean logit (lifted) | Mean logit (control) | Wins | Ties | "
                  "Scenes | p (sign test) |\n|---|---|---|---|---|---|---|\n";
            ChartSpec chart;
            chart.title = "Mean traced logit of absent classes";
            chart.y_label = "mean logit";
            chart.x_labels = {"base", "debiased"};
            ChartSeries lifted{"lifted (" + b.at("lifted").get<std::string>() + ")", {}};
            ChartSeries control{"control (" + b.at("control").get<std::string>() + ")", {}};
            double lo = 0.0, hi = 0.0;
            for (const std::string key : {"base", "obliviate"}) {
                const json& a = audit.at(key);
                md += std::string("| ") + (key == "base" ? "base" : "debiased") + " | " +
                      rd::cell(a.at("mean_logit_lifted")) + " | " +
                      rd::cell(a.at("mean_logit_control")) + " | " +
                      std::to_string(a.at("wins").get<long long>()) + " | " +
                      std::to_string(a.at("ties").get<long long>()) + " | " +
                      std::to_string(a.at("scenes_used").get<long long>()) + " | " +
                      rd::fmt_p(a.at("p_value").get<double>()) + " |\n";
                for (const auto* field : {"mean_logit_lifted", "mean_logit_control"}) {
                    lo = std::min(lo, a.at(field).get<double>());
                    hi = std::max(hi, a.at(field).get<double>());
                }
                lifted.values.push_back(a.at("mean_logit_lifted").get<double>());
                control.values.push_back(a.at("mean_logit_control").get<double>());
            }
            chart.series = {lifted, control};
            chart.y_min = lo - 0.5;
            chart.y_max = hi + 0.5;
            write_file("report/logit_audit.svg", bar_chart_svg(chart));
            md += "\n![logit audit](logit_audit.svg)\n\n";
            md += "Source: " + src("eval/audit.json") + "\n\n";
        } else {
            md += missing("eval/audit.json");
        }

        // -- sweeps ------------------------------------------------------------
        md += "## Debias-weight sweep\n\n";
        if (have("sweeps/alpha.json")) {
            const json rows = load_json("sweeps/alpha.json");
            md += "| alpha | F1 | TNR | PBO | CHAIR Resp. | CHAIR Mention | aborted |\n"
                  "|---|---|---|---|---|---|---|\n";
            for (const auto& row : rows) {
                const json& m = row.at("metrics");
                md += "| " + rd::fmt2(row.at("alpha").get<double>()) + " | " +
                      rd::cell(m.at("f1")) + " | " + rd::cell(m.at("tnr")) + " | " +
                      rd::cell(m.at("pbo"), true) + " | " + rd::cell(row.at("chair_resp")) +
                      " | " + rd::cell(row.at("chair_mention")) + " | " +
                      (row.at("aborted").get<bool>() ? "yes" : "no") + " |\n";
            }
            md += "\nSource: " + src("sweeps/alpha.json") + "\n\n";
        } else {
            md += missing("sweeps/alpha.json");
        }

        md += "## Data-ratio sweep\n\n";
        if (have("sweeps/ratio.json")) {
            const json rows = load_json("sweeps/ratio.json");
            md += "| ratio | AR examples | F1 | TNR | PBO | CHAIR Resp. | CHAIR Mention |\n"
                  "|---|---|---|---|---|---|---|\n";
            for (const auto& row : rows) {
                const json& m = row.at("metrics");
                md += "| 1:" + std::to_string(row.at("ratio").get<long long>()) + " | " +
                      std::to_string(row.at("ar_examples").get<long long>()) + " | " +
                      rd::cell(m.at("f1")) + " | " + rd::cell(m.at("tnr")) + " | " +
                      rd::cell(m.at("pbo"), true) + " | " + rd::cell(row.at("chair_resp")) +
                      " | " + rd::cell(row.at("chair_mention")) + " |\n";
            }
            md += "\nSource: " + src("sweeps/ratio.json") + "\n\n";
        } else {
            md += missing("sweeps/ratio.json");
        }

        md += "## Caption-count scaling\n\n";
        if (have("sweeps/captions.json")) {
            const json rows = load_json("sweeps/captions.json");
            md += "| Captions | Unlearn records | CHAIR Resp. (median) | CHAIR Mention (median) "
                  "|\n|---|---|---|---|\n";
            ChartSpec chart;
            chart.title = "Hallucination after debiasing vs. harvested caption count";
            chart.y_label = "CHAIR Resp. (%)";
            ChartSeries series{"median over seeds", {}};
            for (const auto& row : rows) {
                std::vector<double> mentions;
                for (const auto& run : row.at("runs")) {
                    if (!run.at("chair_mention").is_null()) {
                        mentions.push_back(run.at("chair_mention").get<double>());
                    }
                }
                const std::string mention_cell =
                    mentions.empty() ? "n/a" : rd::fmt2(rd::median_of(mentions));
                md += "| " + std::to_string(row.at("captions").get<long long>()) + " | " +
                      std::to_string(row.at("unlearn_records").get<long long>()) + " | " +
                      rd::cell(row.at("median_chair_resp")) + " | " + mention_cell + " |\n";
                chart.x_labels.push_back(std::to_string(row.at("captions").get<long long>()));
                series.values.push_back(row.at("median_chair_resp").get<double>());
            }
            chart.series.push_back(std::move(series));
            double hi = 1.0;
            for (double v : chart.series[0].values) hi = std::max(hi, v);
            chart.y_max = hi * 1.25;
            write_file("report/scaling.svg", line_chart_svg(chart));
            md += "\n![scaling](scaling.svg)\n\n";
            md += "Source: " + src("sweeps/captions.json") + "\n\n";
        } else {
            md += missing("sweeps/captions.json");
        }

        write_file("report/report.md", md);
    });
}

}  // namespace mirage

#endif  // MIRAGE_REPORT_HPP
