#include "pkit/fkm_io.hpp"

#include "pkit/blob_io.hpp"

#include <nlohmann/json.hpp>

#include <stdexcept>

namespace pkit {

namespace {

using json = nlohmann::json;

struct ArraySlot {
    const char* name;
    Eigen::MatrixXd* matrix;
};

void append_row_major(std::vector<double>& out, const Eigen::MatrixXd& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) out.push_back(m(r, c));
    }
}

}  // namespace

void save_fkm(const FlameModel& model, const std::filesystem::path& manifest) {
    model.validate();
    std::filesystem::path blob = manifest;
    blob.replace_extension(".bin");

    const Eigen::MatrixXd tmpl = model.template_vertices;
    const std::pair<const char*, const Eigen::MatrixXd*> arrays[] = {
        {"template", &tmpl},
        {"shape_basis", &model.shape_basis},
        {"pose_basis", &model.pose_basis},
        {"expr_basis", &model.expr_basis},
        {"joint_regressor", &model.joint_regressor},
        {"skin_weights", &model.skin_weights},
    };
    std::vector<double> values;
    json table = json::object();
    for (const auto& [name, m] : arrays) {
        table[name] = {{"offset", values.size() * 4}, {"rows", m->rows()}, {"cols", m->cols()}};
        append_row_major(values, *m);
    }
    json faces = json::array();
    for (const Face& f : model.faces) faces.push_back({f[0], f[1], f[2]});

    const json doc = {
        {"format", kFkmVersion},
        {"n_vertices", model.n_vertices()},
        {"n_joints", model.n_joints()},
        {"dims", {{"shape", model.n_shape()}, {"expr", model.n_expr()}}},
        {"kintree", model.kintree},
        {"faces", faces},
        {"blob", blob.filename().string()},
        {"arrays", table},
    };
    write_f32_blob(blob, values);
    write_text_file(manifest, doc.dump(1) + "\n");
}

FlameModel load_fkm(const std::filesystem::path& manifest) {
    json doc;
    try {
        doc = json::parse(read_text_file(manifest));
    } catch (const json::exception& e) {
        throw std::runtime_error(manifest.string() + ": " + e.what());
    }
    if (doc.value("format", "") != kFkmVersion) {
        throw std::runtime_error(manifest.string() + ": not an " + std::string(kFkmVersion) + " manifest");
    }
    const int n = doc.at("n_vertices").get<int>();
    const int joints = doc.at("n_joints").get<int>();
    const int n_shape = doc.at("dims").at("shape").get<int>();
    const int n_expr = doc.at("dims").at("expr").get<int>();
    const std::vector<double> blob = read_f32_blob(manifest.parent_path() / doc.at("blob").get<std::string>());

    FlameModel m;
    m.kintree = doc.at("kintree").get<std::vector<int32_t>>();
    for (const auto& f : doc.at("faces")) m.faces.push_back({f.at(0).get<int32_t>(), f.at(1).get<int32_t>(), f.at(2).get<int32_t>()});

    Eigen::MatrixXd tmpl;
    const std::tuple<const char*, Eigen::MatrixXd*, Eigen::Index, Eigen::Index> slots[] = {
        {"template", &tmpl, 3 * n, 1},
        {"shape_basis", &m.shape_basis, 3 * n, n_shape},
        {"pose_basis", &m.pose_basis, 3 * n, 9 * (joints - 1)},
        {"expr_basis", &m.expr_basis, 3 * n, n_expr},
        {"joint_regressor", &m.joint_regressor, joints, n},
        {"skin_weights", &m.skin_weights, joints, n},
    };
    const json& table = doc.at("arrays");
    for (const auto& [name, target, rows, cols] : slots) {
        const json& entry = table.at(name);
        if (entry.at("rows").get<Eigen::Index>() != rows || entry.at("cols").get<Eigen::Index>() != cols) {
            throw std::runtime_error(manifest.string() + ": array " + name + " has inconsistent dimensions");
        }
        const size_t offset = entry.at("offset").get<size_t>();
        if (offset % 4 != 0 || offset / 4 + static_cast<size_t>(rows * cols) > blob.size()) {
            throw std::runtime_error(manifest.string() + ": array " + name + " lies outside the blob");
        }
        target->resize(rows, cols);
        size_t k = offset / 4;
        for (Eigen::Index r = 0; r < rows; ++r) {
            for (Eigen::Index c = 0; c < cols; ++c) (*target)(r, c) = blob[k++];
        }
    }
    m.template_vertices = tmpl.col(0);
    // float32 storage perturbs the weight sums slightly; renormalize.
    for (Eigen::Index v = 0; v < m.skin_weights.cols(); ++v) {
        const double s = m.skin_weights.col(v).sum();
        if (s > 0.0) m.skin_weights.col(v) /= s;
    }
    m.validate();
    return m;
}

FlameModel load_model(const std::string& source) {
    if (source == "mini") return make_mini_flame();
    return load_fkm(source);
}

}  // namespace pkit
