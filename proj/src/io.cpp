#include "gridtop/io.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>
#include <unordered_map>

#include "gridtop/errors.hpp"

namespace gridtop {

using json = nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// JSON parsing with element line numbers

/// Forward iterator over a string that counts the newlines it has passed.
class LineCountingIterator {
  public:
    using iterator_category = std::forward_iterator_tag;
    using value_type = char;
    using difference_type = std::ptrdiff_t;
    using pointer = const char*;
    using reference = const char&;

    LineCountingIterator() = default;
    LineCountingIterator(const char* p, std::size_t* line) : p_(p), line_(line) {}

    reference operator*() const { return *p_; }
    LineCountingIterator& operator++() {
        if (*p_ == '\n') {
            ++*line_;
        }
        ++p_;
        return *this;
    }
    LineCountingIterator operator++(int) {
        auto tmp = *this;
        ++*this;
        return tmp;
    }
    bool operator==(const LineCountingIterator& o) const { return p_ == o.p_; }
    bool operator!=(const LineCountingIterator& o) const { return p_ != o.p_; }

  private:
    const char* p_ = nullptr;
    std::size_t* line_ = nullptr;
};

/// SAX handler that builds the DOM and records the line each value starts on,
/// keyed by JSON pointer.
class LocatingSax {
  public:
    LocatingSax(json& root, const std::size_t* line) : dom_(root, true), line_(line) {}

    bool null() { return scalar([&] { return dom_.null(); }); }
    bool boolean(bool v) { return scalar([&] { return dom_.boolean(v); }); }
    bool number_integer(json::number_integer_t v) { return scalar([&] { return dom_.number_integer(v); }); }
    bool number_unsigned(json::number_unsigned_t v) { return scalar([&] { return dom_.number_unsigned(v); }); }
    bool number_float(json::number_float_t v, const json::string_t& s) {
        return scalar([&] { return dom_.number_float(v, s); });
    }
    bool string(json::string_t& v) { return scalar([&] { return dom_.string(v); }); }
    bool binary(json::binary_t& v) { return scalar([&] { return dom_.binary(v); }); }

    bool start_object(std::size_t n) {
        stack_.push_back({false, 0, begin_value(), {}});
        return dom_.start_object(n);
    }
    bool key(json::string_t& k) {
        stack_.back().key = k;
        return dom_.key(k);
    }
    bool end_object() {
        stack_.pop_back();
        end_value();
        return dom_.end_object();
    }
    bool start_array(std::size_t n) {
        stack_.push_back({true, 0, begin_value(), {}});
        return dom_.start_array(n);
    }
    bool end_array() {
        stack_.pop_back();
        end_value();
        return dom_.end_array();
    }
    bool parse_error(std::size_t /*pos*/, const std::string& /*token*/, const nlohmann::detail::exception& ex) {
        throw gridtop::parse_error(std::string("malformed JSON: ") + ex.what(), *line_);
    }

    std::unordered_map<std::string, std::size_t> lines;

  private:
    struct Frame {
        bool array;
        std::size_t index;
        std::string path;
        std::string key;
    };

    std::string child_path() const {
        if (stack_.empty()) {
            return "";
        }
        const Frame& f = stack_.back();
        return f.path + "/" + (f.array ? std::to_string(f.index) : f.key);
    }
    std::string begin_value() {
        std::string p = child_path();
        lines.emplace(p, *line_);
        return p;
    }
    void end_value() {
        if (!stack_.empty() && stack_.back().array) {
            ++stack_.back().index;
        }
    }
    template <typename F>
    bool scalar(F&& f) {
        begin_value();
        const bool ok = f();
        end_value();
        return ok;
    }

    nlohmann::detail::json_sax_dom_parser<json> dom_;
    const std::size_t* line_;
    std::vector<Frame> stack_;
};

struct LocatedJson {
    json root;
    std::unordered_map<std::string, std::size_t> lines;

    std::size_t line_of(std::string pointer) const {
        while (true) {
            const auto it = lines.find(pointer);
            if (it != lines.end()) {
                return it->second;
            }
            const auto slash = pointer.rfind('/');
            if (slash == std::string::npos) {
                return 0;
            }
            pointer.resize(slash);
        }
    }
};

LocatedJson parse_located(const std::string& text) {
    LocatedJson out;
    std::size_t line = 1;
    LocatingSax sax(out.root, &line);
    try {
        json::sax_parse(LineCountingIterator(text.data(), &line),
                        LineCountingIterator(text.data() + text.size(), &line), &sax);
    } catch (const json::parse_error& e) {
        const std::size_t byte = std::min<std::size_t>(e.byte, text.size());
        const auto err_line = 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + byte, '\n'));
        throw parse_error(std::string("malformed JSON: ") + e.what(), err_line);
    }
    out.lines = std::move(sax.lines);
    return out;
}

[[noreturn]] void schema_error(const LocatedJson& doc, const std::string& pointer, const std::string& what) {
    throw validation_error(pointer + ": " + what, doc.line_of(pointer));
}

const json& require(const LocatedJson& doc, const json& obj, const std::string& pointer, const char* key) {
    if (!obj.is_object()) {
        schema_error(doc, pointer, "expected an object");
    }
    const auto it = obj.find(key);
    if (it == obj.end()) {
        schema_error(doc, pointer, std::string("missing field '") + key + "'");
    }
    return *it;
}

NodeId require_id(const LocatedJson& doc, const json& obj, const std::string& pointer, const char* key) {
    const json& v = require(doc, obj, pointer, key);
    if (!v.is_number_integer()) {
        schema_error(doc, pointer + "/" + key, "expected an integer node id");
    }
    return v.get<NodeId>();
}

double require_number(const LocatedJson& doc, const json& obj, const std::string& pointer, const char* key) {
    const json& v = require(doc, obj, pointer, key);
    if (!v.is_number()) {
        schema_error(doc, pointer + "/" + key, "expected a number");
    }
    return v.get<double>();
}

bool optional_bool(const LocatedJson& doc, const json& obj, const std::string& pointer, const char* key,
                   bool fallback) {
    const auto it = obj.find(key);
    if (it == obj.end()) {
        return fallback;
    }
    if (!it->is_boolean()) {
        schema_error(doc, pointer + "/" + key, "expected true or false");
    }
    return it->get<bool>();
}

const char* role_name(LineRole r) {
    switch (r) {
        case LineRole::feeder: return "feeder";
        case LineRole::tie: return "tie";
        case LineRole::added: return "added";
    }
    return "feeder";
}

Eigen::MatrixXd matrix_from_json(const json& j, Eigen::Index n, const char* name) {
    if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != n) {
        throw model_error(std::string(name) + " must be an array of " + std::to_string(n) + " rows");
    }
    Eigen::MatrixXd m(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const json& row = j[static_cast<std::size_t>(i)];
        if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != n) {
            throw model_error(std::string(name) + " row " + std::to_string(i) + " must have " + std::to_string(n) +
                              " entries");
        }
        for (Eigen::Index k = 0; k < n; ++k) {
            m(i, k) = row[static_cast<std::size_t>(k)].get<double>();
        }
    }
    return m;
}

Eigen::VectorXd vector_from_json(const json& j, Eigen::Index n, const char* name) {
    if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != n) {
        throw model_error(std::string(name) + " must be an array of " + std::to_string(n) + " numbers");
    }
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        v(i) = j[static_cast<std::size_t>(i)].get<double>();
    }
    return v;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) {
        if (!cell.empty() && cell.back() == '\r') {
            cell.pop_back();
        }
        out.push_back(cell);
    }
    return out;
}

template <typename T>
T parse_cell(const std::string& cell, std::size_t line) {
    T v{};
    const char* first = cell.data();
    const char* last = cell.data() + cell.size();
    while (first != last && *first == ' ') {
        ++first;
    }
    const auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last) {
        throw parse_error("bad CSV value '" + cell + "'", line);
    }
    return v;
}

}  // namespace

// ---------------------------------------------------------------------------
// Grid files

GridFile parse_grid_text(const std::string& text) {
    const LocatedJson doc = parse_located(text);
    const json& root = doc.root;
    if (!root.is_object()) {
        schema_error(doc, "", "top level must be an object");
    }

    GridFile out;
    if (const auto meta = root.find("meta"); meta != root.end()) {
        if (!meta->is_object()) {
            schema_error(doc, "/meta", "expected an object");
        }
        if (const auto name = meta->find("name"); name != meta->end()) {
            if (!name->is_string()) {
                schema_error(doc, "/meta/name", "expected a string");
            }
            out.name = name->get<std::string>();
        }
    }

    const json& nodes = require(doc, root, "", "nodes");
    if (!nodes.is_array()) {
        schema_error(doc, "/nodes", "expected an array");
    }
    std::vector<Node> node_list;
    std::set<NodeId> ids;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        const std::string ptr = "/nodes/" + std::to_string(i);
        const NodeId id = require_id(doc, nodes[i], ptr, "id");
        const json& kind = require(doc, nodes[i], ptr, "kind");
        if (!kind.is_string() || (kind != "load" && kind != "substation")) {
            schema_error(doc, ptr + "/kind", "kind must be \"load\" or \"substation\"");
        }
        if (!ids.insert(id).second) {
            schema_error(doc, ptr, "duplicate node id " + std::to_string(id));
        }
        node_list.push_back({id, kind == "substation" ? NodeKind::substation : NodeKind::load});
    }

    const json& edges = require(doc, root, "", "edges");
    if (!edges.is_array()) {
        schema_error(doc, "/edges", "expected an array");
    }
    std::vector<Line> lines;
    std::vector<LineIndex> closed;
    std::set<std::pair<NodeId, NodeId>> seen_pairs;
    for (std::size_t e = 0; e < edges.size(); ++e) {
        const std::string ptr = "/edges/" + std::to_string(e);
        Line l;
        l.from = require_id(doc, edges[e], ptr, "from");
        l.to = require_id(doc, edges[e], ptr, "to");
        l.r = require_number(doc, edges[e], ptr, "r");
        l.x = require_number(doc, edges[e], ptr, "x");
        l.switchable = optional_bool(doc, edges[e], ptr, "switchable", false);
        if (const auto role = edges[e].find("role"); role != edges[e].end()) {
            if (*role == "feeder") {
                l.role = LineRole::feeder;
            } else if (*role == "tie") {
                l.role = LineRole::tie;
            } else if (*role == "added") {
                l.role = LineRole::added;
            } else {
                schema_error(doc, ptr + "/role", "role must be \"feeder\", \"tie\" or \"added\"");
            }
        }
        if (!ids.contains(l.from) || !ids.contains(l.to)) {
            schema_error(doc, ptr, "edge references unknown node " + std::to_string(ids.contains(l.from) ? l.to : l.from));
        }
        if (l.from == l.to) {
            schema_error(doc, ptr, "edge is a self loop");
        }
        if (!(l.r > 0.0) || !(l.x > 0.0)) {
            schema_error(doc, ptr, "r and x must be strictly positive");
        }
        if (!seen_pairs.insert(std::minmax(l.from, l.to)).second) {
            schema_error(doc, ptr, "duplicate edge " + std::to_string(l.from) + "-" + std::to_string(l.to));
        }
        if (optional_bool(doc, edges[e], ptr, "closed", false)) {
            closed.push_back(e);
        }
        lines.push_back(l);
    }

    try {
        out.grid = std::make_shared<const GridGraph>(std::move(node_list), std::move(lines));
    } catch (const structural_error& e) {
        throw validation_error(e.what());
    }
    if (!closed.empty()) {
        try {
            out.forest = ForestConfig::from_closed_lines(out.grid, std::move(closed));
        } catch (const structural_error& e) {
            throw validation_error(std::string("closed edges are not a base-constrained spanning forest: ") + e.what());
        }
    }
    return out;
}

GridFile parse_grid(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw parse_error("cannot open " + path.string(), 0);
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_grid_text(ss.str());
}

nlohmann::ordered_json grid_to_json(const GridGraph& grid, const ForestConfig* forest, const std::string& name) {
    nlohmann::ordered_json j;
    j["meta"]["name"] = name;
    j["nodes"] = nlohmann::ordered_json::array();
    for (const Node& n : grid.nodes()) {
        j["nodes"].push_back({{"id", n.id}, {"kind", n.kind == NodeKind::substation ? "substation" : "load"}});
    }
    j["edges"] = nlohmann::ordered_json::array();
    for (LineIndex e = 0; e < grid.line_count(); ++e) {
        const Line& l = grid.line(e);
        j["edges"].push_back({{"from", l.from},
                              {"to", l.to},
                              {"r", l.r},
                              {"x", l.x},
                              {"closed", forest != nullptr && forest->is_closed(e)},
                              {"switchable", l.switchable},
                              {"role", role_name(l.role)}});
    }
    return j;
}

std::string serialize_grid(const GridGraph& grid, const ForestConfig* forest, const std::string& name) {
    return grid_to_json(grid, forest, name).dump(2) + "\n";
}

void write_grid(const std::filesystem::path& path, const GridGraph& grid, const ForestConfig* forest,
                const std::string& name) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw error("cannot write " + path.string());
    }
    out << serialize_grid(grid, forest, name);
}

// ---------------------------------------------------------------------------
// Samples

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

void write_samples_csv(std::ostream& out, const GridGraph& grid, const Eigen::MatrixXd& eps) {
    const auto loads = grid.loads();
    if (eps.cols() != static_cast<Eigen::Index>(loads.size())) {
        throw domain_error("sample matrix does not match the grid's load count");
    }
    for (std::size_t i = 0; i < loads.size(); ++i) {
        out << (i ? "," : "") << grid.node(loads[i]).id;
    }
    out << '\n';
    std::string row;
    for (Eigen::Index j = 0; j < eps.rows(); ++j) {
        row.clear();
        for (Eigen::Index i = 0; i < eps.cols(); ++i) {
            if (i) {
                row += ',';
            }
            row += format_double(eps(j, i));
        }
        row += '\n';
        out << row;
    }
}

std::pair<std::vector<NodeId>, Eigen::MatrixXd> read_samples_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) {
        throw parse_error("empty sample file", 1);
    }
    std::vector<NodeId> ids;
    for (const std::string& cell : split_csv_line(line)) {
        ids.push_back(parse_cell<NodeId>(cell, 1));
    }
    if (ids.empty()) {
        throw parse_error("sample header has no columns", 1);
    }
    std::vector<double> values;
    std::size_t rows = 0;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") {
            continue;
        }
        const auto cells = split_csv_line(line);
        if (cells.size() != ids.size()) {
            throw parse_error("expected " + std::to_string(ids.size()) + " values, got " +
                                  std::to_string(cells.size()),
                              lineno);
        }
        for (const std::string& c : cells) {
            values.push_back(parse_cell<double>(c, lineno));
        }
        ++rows;
    }
    Eigen::MatrixXd eps(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(ids.size()));
    for (std::size_t j = 0; j < rows; ++j) {
        for (std::size_t i = 0; i < ids.size(); ++i) {
            eps(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = values[j * ids.size() + i];
        }
    }
    return {std::move(ids), std::move(eps)};
}

Eigen::MatrixXd read_samples_csv(std::istream& in, const GridGraph& grid) {
    auto [ids, raw] = read_samples_csv(in);
    if (ids.size() != grid.load_count()) {
        throw validation_error("sample file has " + std::to_string(ids.size()) + " columns, grid has " +
                               std::to_string(grid.load_count()) + " load nodes");
    }
    Eigen::MatrixXd eps(raw.rows(), raw.cols());
    std::vector<bool> filled(grid.load_count(), false);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (!grid.contains(ids[i])) {
            throw validation_error("sample column " + std::to_string(ids[i]) + " is not a grid node");
        }
        const auto pos = grid.load_position(grid.index_of(ids[i]));
        if (!pos || filled[*pos]) {
            throw validation_error("sample column " + std::to_string(ids[i]) + " is not a distinct load node");
        }
        filled[*pos] = true;
        eps.col(static_cast<Eigen::Index>(*pos)) = raw.col(static_cast<Eigen::Index>(i));
    }
    return eps;
}

// ---------------------------------------------------------------------------
// Injection models

GaussianLoadParams load_params_from_json(const json& j) {
    GaussianLoadParams p;
    if (!j.is_object()) {
        throw model_error("model must be a JSON object");
    }
    p.mu_p = j.value("mu_p", p.mu_p);
    p.sigma_ratio = j.value("sigma_ratio", p.sigma_ratio);
    p.rho = j.value("rho", p.rho);
    p.q_ratio = j.value("q_ratio", p.q_ratio);
    p.q_noise_ratio = j.value("q_noise_ratio", p.q_noise_ratio);
    return p;
}

nlohmann::ordered_json load_params_to_json(const GaussianLoadParams& p) {
    return {{"mu_p", p.mu_p},
            {"sigma_ratio", p.sigma_ratio},
            {"rho", p.rho},
            {"q_ratio", p.q_ratio},
            {"q_noise_ratio", p.q_noise_ratio}};
}

InjectionModel model_from_json(const json& j, const GridGraph& grid) {
    if (!j.is_object()) {
        throw model_error("model must be a JSON object");
    }
    if (!j.contains("node_ids")) {
        return make_gaussian_load_model(grid.load_count(), load_params_from_json(j));
    }
    const auto n = static_cast<Eigen::Index>(grid.load_count());
    const auto ids = j.at("node_ids").get<std::vector<NodeId>>();
    if (static_cast<Eigen::Index>(ids.size()) != n) {
        throw model_error("model lists " + std::to_string(ids.size()) + " nodes, grid has " + std::to_string(n) +
                          " load nodes");
    }
    // perm[i] = load position of the i-th listed node
    std::vector<Eigen::Index> perm;
    for (const NodeId id : ids) {
        const auto pos = grid.contains(id) ? grid.load_position(grid.index_of(id)) : std::nullopt;
        if (!pos) {
            throw model_error("model node " + std::to_string(id) + " is not a load node of the grid");
        }
        perm.push_back(static_cast<Eigen::Index>(*pos));
    }
    auto reorder_v = [&](const Eigen::VectorXd& v) {
        Eigen::VectorXd out(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            out(perm[static_cast<std::size_t>(i)]) = v(i);
        }
        return out;
    };
    auto reorder_m = [&](const Eigen::MatrixXd& m) {
        Eigen::MatrixXd out(n, n);
        for (Eigen::Index i = 0; i < n; ++i) {
            for (Eigen::Index k = 0; k < n; ++k) {
                out(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(k)]) = m(i, k);
            }
        }
        return out;
    };
    return InjectionModel::from_covariances(reorder_v(vector_from_json(j.at("mu_p"), n, "mu_p")),
                                            reorder_v(vector_from_json(j.at("mu_q"), n, "mu_q")),
                                            reorder_m(matrix_from_json(j.at("cov_p"), n, "cov_p")),
                                            reorder_m(matrix_from_json(j.at("cov_q"), n, "cov_q")),
                                            reorder_m(matrix_from_json(j.at("cov_pq"), n, "cov_pq")));
}

nlohmann::ordered_json model_to_json(const InjectionModel& model, const GridGraph& grid) {
    nlohmann::ordered_json j;
    std::vector<NodeId> ids;
    for (const NodeIndex u : grid.loads()) {
        ids.push_back(grid.node(u).id);
    }
    auto rows = [](const Eigen::MatrixXd& m) {
        std::vector<std::vector<double>> out(static_cast<std::size_t>(m.rows()));
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            for (Eigen::Index k = 0; k < m.cols(); ++k) {
                out[static_cast<std::size_t>(i)].push_back(m(i, k));
            }
        }
        return out;
    };
    j["node_ids"] = ids;
    j["mu_p"] = std::vector<double>(model.mu_p().begin(), model.mu_p().end());
    j["mu_q"] = std::vector<double>(model.mu_q().begin(), model.mu_q().end());
    j["cov_p"] = rows(model.cov_p());
    j["cov_q"] = rows(model.cov_q());
    j["cov_pq"] = rows(model.cov_pq());
    return j;
}

}  // namespace gridtop
