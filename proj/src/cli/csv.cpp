#include "csv.hpp"

#include "ghme/errors.hpp"

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

namespace ghme::cli {

namespace {

std::vector<std::string> split_line(std::string line) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    for (auto& f : out) {
        const auto b = f.find_first_not_of(" \t");
        const auto e = f.find_last_not_of(" \t");
        f = b == std::string::npos ? std::string() : f.substr(b, e - b + 1);
    }
    return out;
}

[[noreturn]] void data_error(const CsvTable& t, std::size_t row, const std::string& msg) {
    std::ostringstream os;
    os << t.path << ":" << t.line_no[row] << ": " << msg;
    fail(ErrorKind::data, os.str());
}

}  // namespace

double number_at(const CsvTable& t, std::size_t row, int col) {
    const std::string& s = t.rows[row][static_cast<std::size_t>(col)];
    if (s.empty()) data_error(t, row, "missing value in column '" + t.header[static_cast<std::size_t>(col)] + "'");
    char* end = nullptr;
    errno = 0;
    const double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0' || errno == ERANGE || !std::isfinite(v))
        data_error(t, row, "'" + s + "' in column '" + t.header[static_cast<std::size_t>(col)] + "' is not a finite number");
    return v;
}

int CsvTable::column(const std::string& name) const {
    for (std::size_t k = 0; k < header.size(); ++k)
        if (header[k] == name) return static_cast<int>(k);
    return -1;
}

CsvTable read_csv(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) fail(ErrorKind::data, "cannot open data file '" + path + "'");
    CsvTable t;
    t.path = path;
    std::string line;
    std::size_t no = 0;
    while (std::getline(is, line)) {
        ++no;
        if (no == 1 && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
        if (line.empty() || line == "\r") continue;
        auto fields = split_line(line);
        if (t.header.empty()) {
            t.header = std::move(fields);
            continue;
        }
        if (fields.size() != t.header.size()) {
            std::ostringstream os;
            os << path << ":" << no << ": expected " << t.header.size() << " fields, found " << fields.size();
            fail(ErrorKind::data, os.str());
        }
        t.rows.push_back(std::move(fields));
        t.line_no.push_back(no);
    }
    if (t.header.empty()) fail(ErrorKind::data, "data file '" + path + "' has no header");
    return t;
}

LongitudinalDataset dataset_from_csv(const CsvTable& t, const RoleMap& roles, bool need_y) {
    const int id_col = t.column(roles.id);
    if (id_col < 0) fail(ErrorKind::data, t.path + ": id column '" + roles.id + "' not found");
    const int y_col = t.column(roles.y);
    if (y_col < 0 && need_y) fail(ErrorKind::data, t.path + ": response column '" + roles.y + "' not found");
    auto resolve = [&](const std::vector<std::string>& names, const char* role) {
        std::vector<int> cols;
        for (const auto& n : names) {
            const int c = t.column(n);
            if (c < 0 && n != "intercept")
                fail(ErrorKind::data, t.path + ": " + role + " column '" + n + "' not found");
            cols.push_back(c);  // -1 marks a synthesized intercept
        }
        if (cols.empty()) fail(ErrorKind::data, std::string("no columns declared for role ") + role);
        return cols;
    };
    const auto xc = resolve(roles.x, "x"), zc = resolve(roles.z, "z"), wc = resolve(roles.w, "w");

    std::map<std::string, std::size_t> index;
    std::vector<std::string> order;
    std::vector<std::vector<std::size_t>> members;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const std::string& id = t.rows[r][static_cast<std::size_t>(id_col)];
        if (id.empty()) data_error(t, r, "missing id");
        auto [it, fresh] = index.emplace(id, order.size());
        if (fresh) {
            order.push_back(id);
            members.emplace_back();
        }
        members[it->second].push_back(r);
    }

    LongitudinalDataset ds;
    ds.records.reserve(order.size());
    auto fill = [&](const std::vector<int>& cols, std::size_t row) {
        Eigen::RowVectorXd v(static_cast<Eigen::Index>(cols.size()));
        for (std::size_t k = 0; k < cols.size(); ++k)
            v[static_cast<Eigen::Index>(k)] = cols[k] < 0 ? 1.0 : number_at(t, row, cols[k]);
        return v;
    };
    for (std::size_t g = 0; g < order.size(); ++g) {
        IndividualRecord rec;
        rec.id = order[g];
        const auto n = static_cast<Eigen::Index>(members[g].size());
        rec.y.resize(n);
        rec.x.resize(n, static_cast<Eigen::Index>(xc.size()));
        rec.z.resize(n, static_cast<Eigen::Index>(zc.size()));
        rec.w.resize(n, static_cast<Eigen::Index>(wc.size()));
        for (Eigen::Index j = 0; j < n; ++j) {
            const std::size_t row = members[g][static_cast<std::size_t>(j)];
            rec.y[j] = y_col >= 0 && (need_y || !t.rows[row][static_cast<std::size_t>(y_col)].empty())
                           ? number_at(t, row, y_col)
                           : 0.0;
            rec.x.row(j) = fill(xc, row);
            rec.z.row(j) = fill(zc, row);
            rec.w.row(j) = fill(wc, row);
        }
        ds.records.push_back(std::move(rec));
    }
    if (ds.records.empty()) fail(ErrorKind::data, t.path + ": no data rows");
    return ds;
}

std::string format_full(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

RoleMap default_roles(const LongitudinalDataset& ds) {
    RoleMap r;
    for (Eigen::Index k = 0; k < ds.px(); ++k) r.x.push_back("x" + std::to_string(k));
    for (Eigen::Index k = 0; k < ds.pz(); ++k) r.z.push_back("z" + std::to_string(k));
    for (Eigen::Index k = 0; k < ds.pw(); ++k) r.w.push_back("w" + std::to_string(k));
    return r;
}

RoleMap infer_roles(const CsvTable& t) {
    RoleMap r;
    for (const char* prefix : {"x", "z", "w"}) {
        auto& cols = prefix[0] == 'x' ? r.x : prefix[0] == 'z' ? r.z : r.w;
        for (int k = 0; t.column(prefix + std::to_string(k)) >= 0; ++k) cols.push_back(prefix + std::to_string(k));
        if (cols.empty())
            fail(ErrorKind::data, t.path + ": no " + prefix + "0 column; declare the column roles in the data section");
    }
    return r;
}

void write_dataset_csv(const std::string& path, const LongitudinalDataset& ds) {
    std::ofstream os(path, std::ios::binary);
    if (!os) fail(ErrorKind::io, "cannot open '" + path + "' for writing");
    const RoleMap r = default_roles(ds);
    os << "id,y";
    for (const auto* v : {&r.x, &r.z, &r.w})
        for (const auto& n : *v) os << ',' << n;
    os << '\n';
    for (const auto& rec : ds.records)
        for (Eigen::Index j = 0; j < rec.n(); ++j) {
            os << rec.id << ',' << format_full(rec.y[j]);
            for (const Eigen::MatrixXd* m : {&rec.x, &rec.z, &rec.w})
                for (Eigen::Index k = 0; k < m->cols(); ++k) os << ',' << format_full((*m)(j, k));
            os << '\n';
        }
    if (!os) fail(ErrorKind::io, "write to '" + path + "' failed");
}

}  // namespace ghme::cli
