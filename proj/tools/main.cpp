// Command-line driver: corpus synthesis, codec/planner/index training,
// generation, streaming sessions, and evaluation.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "planfill/io.hpp"
#include "planfill/metrics.hpp"
#include "planfill/plan_infill.hpp"
#include "planfill/rng.hpp"
#include "planfill/rvq.hpp"
#include "planfill/synth.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;
using namespace planfill;

namespace {

// ---------------------------------------------------------------------------
// Small binary container for the audio feature quantizer.
// ---------------------------------------------------------------------------

void write_codebook(const std::string& path, const Codebook& cb) {
    std::vector<std::uint8_t> out = {'S', 'A', 'A', 'Q'};
    auto put_u32 = [&out](std::uint32_t v) {
        for (int i = 0; i < 4; ++i)
            out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    };
    put_u32(1);
    put_u32(static_cast<std::uint32_t>(cb.k));
    put_u32(static_cast<std::uint32_t>(cb.dim));
    for (double v : cb.vectors) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        for (int i = 0; i < 8; ++i)
            out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
    }
    write_bytes_atomic(path, out);
}

Codebook read_codebook(const std::string& path) {
    const auto b = read_bytes(path);
    if (b.size() < 16 || std::memcmp(b.data(), "SAAQ", 4) != 0)
        throw std::runtime_error("quantizer file bad magic: " + path);
    auto u32 = [&b](std::size_t off) {
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[off + i]) << (8 * i);
        return v;
    };
    if (u32(4) != 1) throw std::runtime_error("quantizer file bad version: " + path);
    Codebook cb;
    cb.k = u32(8);
    cb.dim = u32(12);
    const std::size_t need = 16 + 8ull * cb.k * cb.dim;
    if (b.size() != need) throw std::runtime_error("quantizer file truncation: " + path);
    cb.vectors.resize(cb.k * cb.dim);
    for (std::size_t i = 0; i < cb.vectors.size(); ++i) {
        std::uint64_t bits = 0;
        for (int j = 0; j < 8; ++j)
            bits |= static_cast<std::uint64_t>(b[16 + 8 * i + j]) << (8 * j);
        std::memcpy(&cb.vectors[i], &bits, 8);
    }
    return cb;
}

GenerationModels load_models(const std::string& dir) {
    GenerationModels m;
    m.body_codec = RvqCodec::deserialize(read_bytes(dir + "/body_codec.bin"));
    m.face_codec = RvqCodec::deserialize(read_bytes(dir + "/face_codec.bin"));
    m.planner = PlannerModel::deserialize(read_bytes(dir + "/planner.bin"));
    m.body_index = RetrievalIndex::deserialize(read_bytes(dir + "/body_index.bin"));
    m.face_index = RetrievalIndex::deserialize(read_bytes(dir + "/face_index.bin"));
    m.audio_quantizer = read_codebook(dir + "/audio_quantizer.bin");
    m.t = m.planner.step();
    return m;
}

ordered_json windows_json(const std::vector<WindowTrace>& windows) {
    ordered_json arr = ordered_json::array();
    for (const WindowTrace& w : windows) {
        ordered_json jw;
        jw["left_step"] = w.left_step;
        jw["accepted_per_round"] = w.refinement.accepted_per_round;
        arr.push_back(std::move(jw));
    }
    return arr;
}

ordered_json trace_json(const GenerationResult& result, const RvqCodec& codec,
                        double audio_seconds, double total_ms) {
    ordered_json j;
    ordered_json kf = ordered_json::array();
    for (const TokenGroup& g : result.keyframes) {
        ordered_json ids = ordered_json::array();
        for (std::size_t layer = 0; layer < g.residuals.size(); ++layer)
            ids.push_back(to_unified_id(codec, layer + 1, g.residuals[layer]));
        kf.push_back(std::move(ids));
    }
    j["keyframes"] = std::move(kf);
    j["windows"] = windows_json(result.body_windows);
    j["face_windows"] = windows_json(result.face_windows);
    j["used_default_class"] = result.used_default_class;
    j["timings_ms"] = {{"body", result.body_ms},
                       {"face", result.face_ms},
                       {"total", total_ms}};
    j["audio_seconds"] = audio_seconds;
    j["realtime_factor"] = audio_seconds > 0.0 ? (total_ms / 1000.0) / audio_seconds : 0.0;
    return j;
}

struct CorpusTokens {
    std::vector<TokenizedMotion> body;
    std::vector<TokenizedMotion> face;
    std::vector<FrameMatrix> audio_features;  // at the token rate
    std::vector<std::string> labels;
};

CorpusTokens tokenize_corpus(const Manifest& manifest, const std::string& base_dir,
                             const RvqCodec& body_codec, const RvqCodec* face_codec,
                             const MelConfig& mel) {
    CorpusTokens out;
    const double token_rate = 20.0 / body_codec.temporal_factor;
    for (const ManifestRow& row : manifest.rows) {
        auto resolve = [&](const std::string& p) {
            return fs::path(p).is_absolute() ? p : (fs::path(base_dir) / p).string();
        };
        const MotionSequence motion = read_motion(resolve(row.motion_path));
        out.body.push_back(encode(body_codec, motion));
        if (face_codec && row.face_path)
            out.face.push_back(encode_face(*face_codec, read_face(resolve(*row.face_path))));
        const AudioClip clip = read_wav(resolve(row.audio_path));
        out.audio_features.push_back(audio_feature_matrix(clip, mel, token_rate));
        out.labels.push_back(row.action_label);
    }
    return out;
}

int run(int argc, char** argv) {
    CLI::App app{"plan-then-infill co-speech motion toolkit"};
    app.require_subcommand(1);

    MelConfig mel;

    // ---- synth ----
    auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic corpus");
    std::size_t synth_n = 16;
    std::uint64_t synth_seed = 0;
    std::string synth_out;
    double synth_duration = 6.0;
    synth_cmd->add_option("--n", synth_n, "number of turns");
    synth_cmd->add_option("--seed", synth_seed, "base seed");
    synth_cmd->add_option("--duration", synth_duration, "seconds per turn");
    synth_cmd->add_option("--out", synth_out, "output directory")->required();

    // ---- train-codec ----
    auto* tc_cmd = app.add_subcommand("train-codec", "train an RVQ codec");
    std::string tc_manifest, tc_out;
    std::size_t tc_layers = 4, tc_k = 512;
    std::uint64_t tc_seed = 0;
    bool tc_face = false;
    tc_cmd->add_option("--manifest", tc_manifest)->required();
    tc_cmd->add_option("--layers", tc_layers);
    tc_cmd->add_option("--k", tc_k);
    tc_cmd->add_option("--seed", tc_seed);
    tc_cmd->add_flag("--face", tc_face, "train on blendshape tracks");
    tc_cmd->add_option("--out", tc_out)->required();

    // ---- tokenize / detokenize ----
    auto* tok_cmd = app.add_subcommand("tokenize", "motion file -> token JSON");
    auto* detok_cmd = app.add_subcommand("detokenize", "token JSON -> motion file");
    std::string tok_codec, tok_in, tok_out;
    for (auto* cmd : {tok_cmd, detok_cmd}) {
        cmd->add_option("--codec", tok_codec)->required();
        cmd->add_option("--in", tok_in)->required();
        cmd->add_option("--out", tok_out)->required();
    }

    // ---- train-planner ----
    auto* tp_cmd = app.add_subcommand("train-planner", "fit the keyframe planner");
    std::string tp_manifest, tp_codec, tp_quantizer, tp_out;
    std::size_t tp_t = 4, tp_order = 1;
    double tp_alpha = 0.1;
    tp_cmd->add_option("--manifest", tp_manifest)->required();
    tp_cmd->add_option("--codec", tp_codec)->required();
    tp_cmd->add_option("--audio-quantizer", tp_quantizer)->required();
    tp_cmd->add_option("--t", tp_t);
    tp_cmd->add_option("--order", tp_order);
    tp_cmd->add_option("--alpha", tp_alpha);
    tp_cmd->add_option("--out", tp_out)->required();

    // ---- train-infill-index ----
    auto* ti_cmd =
        app.add_subcommand("train-infill-index", "build retrieval indexes");
    std::string ti_manifest, ti_codec, ti_face_codec, ti_out;
    std::size_t ti_t = 4, ti_k_audio = 64;
    std::uint64_t ti_seed = 0;
    ti_cmd->add_option("--manifest", ti_manifest)->required();
    ti_cmd->add_option("--codec", ti_codec)->required();
    ti_cmd->add_option("--face-codec", ti_face_codec)->required();
    ti_cmd->add_option("--t", ti_t);
    ti_cmd->add_option("--k-audio", ti_k_audio, "audio quantizer size");
    ti_cmd->add_option("--seed", ti_seed);
    ti_cmd->add_option("--out-dir", ti_out)->required();

    // ---- generate ----
    auto* gen_cmd = app.add_subcommand("generate", "one-turn generation");
    std::string gen_label, gen_audio, gen_models, gen_prefix;
    std::uint64_t gen_seed = 0;
    gen_cmd->add_option("--label", gen_label)->required();
    gen_cmd->add_option("--audio", gen_audio)->required();
    gen_cmd->add_option("--models-dir", gen_models)->required();
    gen_cmd->add_option("--seed", gen_seed);
    gen_cmd->add_option("--out-prefix", gen_prefix)->required();

    // ---- stream ----
    auto* stream_cmd = app.add_subcommand("stream", "multi-turn session");
    std::string st_models, st_script, st_out;
    stream_cmd->add_option("--models-dir", st_models)->required();
    stream_cmd->add_option("--script", st_script, "JSON turn list")->required();
    stream_cmd->add_option("--out-dir", st_out)->required();

    // ---- esd ----
    auto* esd_cmd = app.add_subcommand("esd", "event sync distance of one pair");
    std::string esd_audio, esd_motion;
    esd_cmd->add_option("--audio", esd_audio)->required();
    esd_cmd->add_option("--motion", esd_motion)->required();

    // ---- eval ----
    auto* eval_cmd = app.add_subcommand("eval", "evaluate generated motions");
    std::string ev_manifest, ev_dir, ev_codec, ev_out;
    eval_cmd->add_option("--manifest", ev_manifest)->required();
    eval_cmd->add_option("--generated-dir", ev_dir)->required();
    eval_cmd->add_option("--codec", ev_codec)->required();
    eval_cmd->add_option("--out", ev_out, "report path (default stdout)");

    CLI11_PARSE(app, argc, argv);

    if (*synth_cmd) {
        fs::create_directories(synth_out);
        SynthSpec base;
        base.duration = synth_duration;
        Manifest manifest;
        const auto specs = synth_corpus_specs(synth_n, base, synth_seed);
        for (std::size_t i = 0; i < specs.size(); ++i) {
            const DialogueTurn turn = synth_turn(specs[i]);
            char id[16];
            std::snprintf(id, sizeof(id), "turn_%04zu", i);
            ManifestRow row;
            row.id = id;
            row.expression_label = turn.expression_label;
            row.action_label = turn.action_label;
            row.utterance = turn.utterance;
            row.audio_path = std::string(id) + ".wav";
            row.motion_path = std::string(id) + ".motion";
            row.face_path = std::string(id) + ".face";
            write_wav(synth_out + "/" + row.audio_path, turn.audio);
            write_motion(synth_out + "/" + row.motion_path, turn.motion);
            write_face(synth_out + "/" + *row.face_path, *turn.face);
            manifest.rows.push_back(std::move(row));
        }
        write_manifest(synth_out + "/manifest.json", manifest);
        std::cout << "wrote " << synth_n << " turns to " << synth_out << "\n";
        return 0;
    }

    if (*tc_cmd) {
        const Manifest manifest = read_manifest(tc_manifest);
        const std::string base = fs::path(tc_manifest).parent_path().string();
        std::vector<FrameMatrix> corpus;
        for (const ManifestRow& row : manifest.rows) {
            auto resolve = [&](const std::string& p) {
                return fs::path(p).is_absolute() ? p : (fs::path(base) / p).string();
            };
            if (tc_face) {
                if (!row.face_path)
                    throw std::runtime_error("train-codec --face: row '" + row.id +
                                             "' has no face track");
                corpus.push_back(read_face(resolve(*row.face_path)).frames);
            } else {
                corpus.push_back(read_motion(resolve(row.motion_path)).frames);
            }
        }
        const RvqTrainResult trained = train_codec(corpus, tc_layers, tc_k, tc_seed);
        write_bytes_atomic(tc_out, trained.codec.serialize());
        ordered_json j;
        j["codec_id"] = trained.codec.content_id();
        j["residual_energy"] = trained.stats.residual_energy;
        std::cout << j.dump(2) << "\n";
        return 0;
    }

    if (*tok_cmd) {
        const RvqCodec codec = RvqCodec::deserialize(read_bytes(tok_codec));
        write_tokens(tok_out, encode(codec, read_motion(tok_in)));
        return 0;
    }
    if (*detok_cmd) {
        const RvqCodec codec = RvqCodec::deserialize(read_bytes(tok_codec));
        write_motion(tok_out, decode(codec, read_tokens(tok_in)));
        return 0;
    }

    if (*tp_cmd) {
        const Manifest manifest = read_manifest(tp_manifest);
        const std::string base = fs::path(tp_manifest).parent_path().string();
        const RvqCodec codec = RvqCodec::deserialize(read_bytes(tp_codec));
        const Codebook quantizer = read_codebook(tp_quantizer);
        const CorpusTokens corpus = tokenize_corpus(manifest, base, codec, nullptr, mel);
        std::vector<PlannerExample> examples;
        for (std::size_t i = 0; i < corpus.body.size(); ++i) {
            const auto ids = audio_tokens(corpus.audio_features[i], quantizer, tp_t);
            const std::size_t n_kf = (corpus.body[i].groups.size() + tp_t - 1) / tp_t;
            std::vector<std::uint32_t> aligned(ids.begin(),
                                               ids.begin() + std::min(ids.size(), n_kf));
            while (aligned.size() < n_kf) aligned.push_back(ids.back());
            examples.push_back(
                build_training_sequence(corpus.labels[i], corpus.body[i], aligned, tp_t));
            if (n_kf >= 3)
                examples.push_back(build_training_sequence(
                    corpus.labels[i], corpus.body[i], aligned, tp_t, 2));
        }
        const PlannerModel model = PlannerModel::fit(examples, tp_order, tp_alpha,
                                                     tp_t, codec.n_layers(), codec.k);
        write_bytes_atomic(tp_out, model.serialize());
        std::cout << "planner " << model.content_id() << " (" << examples.size()
                  << " examples)\n";
        return 0;
    }

    if (*ti_cmd) {
        const Manifest manifest = read_manifest(ti_manifest);
        const std::string base = fs::path(ti_manifest).parent_path().string();
        const RvqCodec body_codec = RvqCodec::deserialize(read_bytes(ti_codec));
        const RvqCodec face_codec = RvqCodec::deserialize(read_bytes(ti_face_codec));
        const CorpusTokens corpus =
            tokenize_corpus(manifest, base, body_codec, &face_codec, mel);

        std::size_t total_rows = 0;
        for (const FrameMatrix& f : corpus.audio_features) total_rows += f.frames();
        FrameMatrix all_rows(total_rows, corpus.audio_features.front().dims());
        std::size_t at = 0;
        for (const FrameMatrix& f : corpus.audio_features) {
            std::copy(f.data().begin(), f.data().end(),
                      all_rows.data().begin() +
                          static_cast<long>(at * all_rows.dims()));
            at += f.frames();
        }
        const Codebook quantizer =
            kmeans_fit(all_rows, std::min(ti_k_audio, total_rows), ti_seed);

        RetrievalIndex body_index, face_index;
        body_index.t = ti_t;
        face_index.t = ti_t;
        for (std::size_t i = 0; i < corpus.body.size(); ++i) {
            for (const IndexedWindow& w : sliding_windows(
                     corpus.body[i].groups, ti_t, &corpus.audio_features[i])) {
                FrameMatrix audio(ti_t + 1, corpus.audio_features[i].dims());
                audio.data().assign(w.audio.begin(), w.audio.end());
                body_index.add(w.slots, audio);
            }
            if (i < corpus.face.size())
                for (const IndexedWindow& w : sliding_windows(
                         corpus.face[i].groups, ti_t, &corpus.audio_features[i])) {
                    FrameMatrix audio(ti_t + 1, corpus.audio_features[i].dims());
                    audio.data().assign(w.audio.begin(), w.audio.end());
                    face_index.add(w.slots, audio);
                }
        }
        body_index.finalize();
        face_index.finalize();
        fs::create_directories(ti_out);
        write_bytes_atomic(ti_out + "/body_index.bin", body_index.serialize());
        write_bytes_atomic(ti_out + "/face_index.bin", face_index.serialize());
        write_codebook(ti_out + "/audio_quantizer.bin", quantizer);
        std::cout << "indexed " << body_index.entries.size() << " body / "
                  << face_index.entries.size() << " face windows\n";
        return 0;
    }

    if (*gen_cmd) {
        const GenerationModels models = load_models(gen_models);
        const AudioClip clip = read_wav(gen_audio);
        const auto start = std::chrono::steady_clock::now();
        const GenerationResult result = generate_turn(models, gen_label, clip, gen_seed);
        const double total_ms =
            std::chrono::duration<double, std::milli>(
                std::chrono::steady_clock::now() - start)
                .count();
        write_motion(gen_prefix + ".motion", result.motion);
        write_face(gen_prefix + ".face", result.face);
        write_text_atomic(
            gen_prefix + ".trace.json",
            trace_json(result, models.body_codec, clip.duration(), total_ms).dump(2) +
                "\n");
        return 0;
    }

    if (*stream_cmd) {
        const GenerationModels models = load_models(st_models);
        ordered_json script = ordered_json::parse(read_text(st_script));
        fs::create_directories(st_out);
        Session session(models);
        ordered_json turns = ordered_json::array();
        std::size_t i = 0;
        for (const auto& item : script.at("turns")) {
            const std::string label = item.at("label").get<std::string>();
            const std::string audio_path = item.at("audio").get<std::string>();
            const std::uint64_t seed =
                item.contains("seed") ? item.at("seed").get<std::uint64_t>() : 0;
            const fs::path resolved = fs::path(audio_path).is_absolute()
                                          ? fs::path(audio_path)
                                          : fs::path(st_script).parent_path() / audio_path;
            const AudioClip clip = read_wav(resolved.string());
            const auto start = std::chrono::steady_clock::now();
            const GenerationResult result = session.push_turn(label, clip, seed);
            const double total_ms =
                std::chrono::duration<double, std::milli>(
                    std::chrono::steady_clock::now() - start)
                    .count();
            char id[16];
            std::snprintf(id, sizeof(id), "turn_%03zu", i++);
            write_motion(st_out + "/" + id + ".motion", result.motion);
            write_face(st_out + "/" + id + ".face", result.face);
            ordered_json jt =
                trace_json(result, models.body_codec, clip.duration(), total_ms);
            jt["id"] = id;
            turns.push_back(std::move(jt));
        }
        session.close();
        ordered_json j;
        j["turns"] = std::move(turns);
        write_text_atomic(st_out + "/trace.json", j.dump(2) + "\n");
        return 0;
    }

    if (*esd_cmd) {
        const AudioClip clip = read_wav(esd_audio);
        const MotionSequence motion = read_motion(esd_motion);
        const EsdReport report =
            esd(extract_audio_events(clip, mel), extract_motion_events(motion));
        ordered_json j;
        j["esd"] = report.esd;
        j["d_audio_to_motion"] = report.d_audio_to_motion;
        j["d_motion_to_audio"] = report.d_motion_to_audio;
        j["n_audio_events"] = report.n_audio_events;
        j["n_motion_events"] = report.n_motion_events;
        j["penalized"] = report.penalized;
        std::cout << j.dump(2) << "\n";
        return 0;
    }

    if (*eval_cmd) {
        const Manifest manifest = read_manifest(ev_manifest);
        const std::string base = fs::path(ev_manifest).parent_path().string();
        const RvqCodec codec = RvqCodec::deserialize(read_bytes(ev_codec));
        ordered_json per_sample = ordered_json::array();
        std::vector<std::vector<double>> gt_latents, gen_latents;
        double esd_sum = 0.0;
        for (const ManifestRow& row : manifest.rows) {
            auto resolve = [&](const std::string& p) {
                return fs::path(p).is_absolute() ? p : (fs::path(base) / p).string();
            };
            const std::string gen_path = ev_dir + "/" + row.id + ".motion";
            if (!fs::exists(gen_path))
                throw std::runtime_error("eval: missing generated motion: " + gen_path);
            const MotionSequence generated = read_motion(gen_path);
            const MotionSequence reference = read_motion(resolve(row.motion_path));
            const AudioClip clip = read_wav(resolve(row.audio_path));
            const EsdReport report =
                esd(extract_audio_events(clip, mel), extract_motion_events(generated));
            esd_sum += report.esd;
            gt_latents.push_back(latent_features(codec, reference));
            gen_latents.push_back(latent_features(codec, generated));
            ordered_json js;
            js["id"] = row.id;
            js["esd"] = report.esd;
            js["penalized"] = report.penalized;
            per_sample.push_back(std::move(js));
        }
        ordered_json j;
        j["per_sample"] = std::move(per_sample);
        ordered_json agg;
        agg["esd_mean"] = esd_sum / static_cast<double>(manifest.rows.size());
        agg["diversity"] =
            gen_latents.size() >= 2 ? diversity(gen_latents) : 0.0;
        agg["frechet"] = (gt_latents.size() >= 2 && gen_latents.size() >= 2)
                             ? frechet_distance(gt_latents, gen_latents)
                             : 0.0;
        j["aggregate"] = std::move(agg);
        const std::string text = j.dump(2) + "\n";
        if (ev_out.empty())
            std::cout << text;
        else
            write_text_atomic(ev_out, text);
        return 0;
    }

    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const std::exception& e) {
        nlohmann::ordered_json err;
        err["error"] = e.what();
        std::cerr << err.dump() << "\n";
        return 1;
    }
}
